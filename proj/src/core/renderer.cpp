#include "core/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace headsdf {

namespace {

constexpr const char* kLogAlpha = "density/log_alpha";
constexpr const char* kLogBeta = "density/log_beta";

// Interval lengths for one ray's sorted sample positions; the last interval
// runs to the far clip.
std::vector<double> interval_lengths(const std::vector<double>& ts,
                                     double tfar) {
  std::vector<double> us(ts.size());
  for (size_t i = 0; i + 1 < ts.size(); ++i) us[i] = ts[i + 1] - ts[i];
  us.back() = tfar - ts.back();
  return us;
}

}  // namespace

void Camera::validate() const {
  if (width <= 0 || height <= 0)
    throw UsageError("camera: image size must be positive");
  if (!(K[0] > 0.0) || !(K[4] > 0.0))
    throw UsageError("camera: focal lengths must be positive");
  if (K[6] != 0.0 || K[7] != 0.0 || K[8] != 1.0)
    throw UsageError("camera: bottom intrinsic row must be [0 0 1]");
  if (cam2world[12] != 0.0 || cam2world[13] != 0.0 || cam2world[14] != 0.0 ||
      cam2world[15] != 1.0)
    throw UsageError("camera: bottom transform row must be [0 0 0 1]");
}

Ray make_ray(const Camera& cam, double row, double col, double scene_radius) {
  if (!(scene_radius > 0.0))
    throw UsageError("make_ray: scene radius must be positive");
  const double u = col + 0.5;
  const double v = row + 0.5;
  // Back-project through the (upper-triangular) intrinsics.
  const double yc = (v - cam.K[5]) / cam.K[4];
  const double xc = (u - cam.K[2] - cam.K[1] * yc) / cam.K[0];
  const auto& M = cam.cam2world;
  double d[3] = {M[0] * xc + M[1] * yc + M[2], M[4] * xc + M[5] * yc + M[6],
                 M[8] * xc + M[9] * yc + M[10]};
  const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);

  Ray r;
  r.origin = {M[3], M[7], M[11]};
  r.dir = {d[0] / len, d[1] / len, d[2] / len};

  // Clip to the scene sphere |x| = scene_radius around the origin.
  const double b = r.origin[0] * r.dir[0] + r.origin[1] * r.dir[1] +
                   r.origin[2] * r.dir[2];
  const double c = r.origin[0] * r.origin[0] + r.origin[1] * r.origin[1] +
                   r.origin[2] * r.origin[2] - scene_radius * scene_radius;
  const double disc = b * b - c;
  if (disc > 0.0) {
    const double sq = std::sqrt(disc);
    const double t1 = -b + sq;
    if (t1 > 0.0) {
      r.tnear = std::max(-b - sq, 0.0);
      r.tfar = t1;
      r.hits = r.tfar > r.tnear;
    }
  }
  return r;
}

std::vector<Ray> generate_rays(const Camera& cam, double scene_radius) {
  cam.validate();
  std::vector<Ray> rays;
  rays.reserve(static_cast<size_t>(cam.width) * cam.height);
  for (int row = 0; row < cam.height; ++row)
    for (int col = 0; col < cam.width; ++col)
      rays.push_back(make_ray(cam, row, col, scene_radius));
  return rays;
}

double s_density_profile(double s, double alpha, double beta) {
  const double t = -s;
  const double e = 0.5 * std::exp(-std::abs(t) / beta);
  return alpha * (t > 0.0 ? 1.0 - e : e);
}

Var s_density(Var s, Var log_alpha, Var log_beta) {
  if (!s.valid() || s.cols() != 1)
    throw UsageError("s_density: expected signed distances of shape [N,1]");
  Tape& tp = *s.tape;
  Var alpha = exp(log_alpha);
  Var beta = exp(log_beta);
  Var t = neg(s);
  Var e = scale(exp(neg(div(abs(t), beta))), 0.5);
  // Branch selector, constant but consistent with the values on this tape.
  // phi = m*(1-e) + (1-m)*e collapses to m + e*(1-2m); the derivative of each
  // branch meets the true Laplace pdf, so treating m as constant is exact.
  const Tensor tv = t.val();
  Tensor m = Tensor::zeros(tv.rows(), 1);
  Tensor flip = Tensor::zeros(tv.rows(), 1);
  for (int64_t i = 0; i < tv.size(); ++i) {
    const bool inside = tv.data[i] > 0.0;
    m.data[i] = inside ? 1.0 : 0.0;
    flip.data[i] = inside ? -1.0 : 1.0;
  }
  Var phi = add(tp.constant(std::move(m)), mul(e, tp.constant(std::move(flip))));
  return mul(phi, alpha);
}

std::vector<double> stratified_ts(double tnear, double tfar, int n, bool jitter,
                                  Rng& rng) {
  if (!(tfar > tnear))
    throw UsageError("stratified_ts: need tfar > tnear");
  if (n < 1) throw UsageError("stratified_ts: need at least one sample");
  std::vector<double> ts(n);
  if (n == 1) {
    ts[0] = jitter ? tnear + (tfar - tnear) * rng.uniform()
                   : 0.5 * (tnear + tfar);
    return ts;
  }
  if (jitter) {
    const double w = (tfar - tnear) / n;
    for (int i = 0; i < n; ++i) ts[i] = tnear + w * (i + rng.uniform());
  } else {
    for (int i = 0; i < n; ++i)
      ts[i] = tnear + (tfar - tnear) * (static_cast<double>(i) / (n - 1));
    ts.back() = tfar;
  }
  return ts;
}

std::vector<double> importance_ts(const std::vector<double>& coarse_ts,
                                  const std::vector<double>& weights,
                                  double tfar, int n_fine, Rng& rng) {
  if (coarse_ts.empty() || weights.size() != coarse_ts.size())
    throw UsageError("importance_ts: weights must match the coarse samples");
  if (n_fine < 1)
    throw UsageError("importance_ts: need at least one fine sample");
  const int n = static_cast<int>(coarse_ts.size());
  std::vector<double> edges(n + 1);
  std::copy(coarse_ts.begin(), coarse_ts.end(), edges.begin());
  edges[n] = tfar;

  // Piecewise-constant CDF over the intervals; the floor mass keeps empty
  // regions reachable and the total strictly positive.
  std::vector<double> cdf(n + 1, 0.0);
  for (int i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + (weights[i] + 1e-5);
  const double total = cdf[n];

  std::vector<double> out = coarse_ts;
  out.reserve(coarse_ts.size() + n_fine);
  for (int k = 0; k < n_fine; ++k) {
    const double u = (k + rng.uniform()) / n_fine * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    int idx = static_cast<int>(it - cdf.begin()) - 1;
    idx = std::clamp(idx, 0, n - 1);
    const double mass = cdf[idx + 1] - cdf[idx];
    const double frac = mass > 0.0 ? (u - cdf[idx]) / mass : 0.5;
    out.push_back(edges[idx] + frac * (edges[idx + 1] - edges[idx]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> composite_weights_plain(const std::vector<double>& sigma,
                                            const std::vector<double>& us) {
  if (sigma.size() != us.size())
    throw UsageError("composite_weights_plain: length mismatch");
  std::vector<double> w(sigma.size());
  double acc = 0.0;  // running optical depth, matching the taped cumsum
  for (size_t i = 0; i < sigma.size(); ++i) {
    const double su = sigma[i] * us[i];
    w[i] = std::exp(-acc) * (1.0 - std::exp(-su));
    acc += su;
  }
  return w;
}

RayBatchRender render_rays(ParamBinding& params, const HeadModel& model,
                           const std::string& identity,
                           std::span<const Ray> rays, const RenderOptions& opt,
                           Rng& rng) {
  if (rays.empty()) throw UsageError("render_rays: empty ray batch");
  if (opt.n_coarse < 2)
    throw UsageError("render_rays: need at least two coarse samples");
  if (opt.n_fine < 0)
    throw UsageError("render_rays: fine sample count must be non-negative");

  const int R = static_cast<int>(rays.size());
  const int S = opt.n_coarse + opt.n_fine;

  RayBatchRender out;
  out.samples_per_ray = S;
  out.color = Tensor::zeros(R, 3);
  out.opacity = Tensor::zeros(R, 1);
  out.weights = Tensor::zeros(R, S);
  out.transmittance = Tensor::zeros(R, S);
  out.ts = Tensor::zeros(R, S);
  for (int r = 0; r < R; ++r) {
    if (rays[r].hits) {
      out.hit_rows.push_back(r);
    } else {
      for (int k = 0; k < 3; ++k) out.color.at(r, k) = opt.background[k];
      for (int i = 0; i < S; ++i) out.transmittance.at(r, i) = 1.0;
    }
  }
  const int H = static_cast<int>(out.hit_rows.size());
  if (H == 0) return out;

  std::vector<std::vector<double>> ts(H);
  for (int h = 0; h < H; ++h) {
    const Ray& ray = rays[out.hit_rows[h]];
    ts[h] = stratified_ts(ray.tnear, ray.tfar, opt.n_coarse, opt.jitter, rng);
  }

  if (opt.n_fine > 0) {
    // Grad-free coarse density pass with the current parameter values, on a
    // throwaway tape, to drive importance resampling.
    Tape scratch;
    NoGradGuard ng(scratch);
    ParamBinding frozen(scratch, params.store(), /*frozen_all=*/true);
    Tensor Xc = Tensor::zeros(static_cast<int64_t>(H) * opt.n_coarse, 3);
    for (int h = 0; h < H; ++h) {
      const Ray& ray = rays[out.hit_rows[h]];
      for (int i = 0; i < opt.n_coarse; ++i) {
        const int64_t p = static_cast<int64_t>(h) * opt.n_coarse + i;
        for (int k = 0; k < 3; ++k)
          Xc.at(p, k) = ray.origin[k] + ts[h][i] * ray.dir[k];
      }
    }
    FieldEval fe =
        eval_fields(frozen, model, identity, scratch.constant(std::move(Xc)));
    const Tensor sig =
        s_density(fe.s_hat, frozen(kLogAlpha), frozen(kLogBeta)).val();
    for (int h = 0; h < H; ++h) {
      const Ray& ray = rays[out.hit_rows[h]];
      std::vector<double> srow(opt.n_coarse);
      for (int i = 0; i < opt.n_coarse; ++i)
        srow[i] = sig.data[static_cast<int64_t>(h) * opt.n_coarse + i];
      const std::vector<double> w =
          composite_weights_plain(srow, interval_lengths(ts[h], ray.tfar));
      ts[h] = importance_ts(ts[h], w, ray.tfar, opt.n_fine, rng);
    }
  }

  // Final sample points, view directions, and interval lengths.
  const int64_t P = static_cast<int64_t>(H) * S;
  Tensor X = Tensor::zeros(P, 3);
  Tensor V = Tensor::zeros(P, 3);
  Tensor us = Tensor::zeros(H, S);
  for (int h = 0; h < H; ++h) {
    const Ray& ray = rays[out.hit_rows[h]];
    const std::vector<double> ulens = interval_lengths(ts[h], ray.tfar);
    for (int i = 0; i < S; ++i) {
      const int64_t p = static_cast<int64_t>(h) * S + i;
      for (int k = 0; k < 3; ++k) {
        X.at(p, k) = ray.origin[k] + ts[h][i] * ray.dir[k];
        V.at(p, k) = ray.dir[k];
      }
      us.at(h, i) = ulens[i];
      out.ts.at(out.hit_rows[h], i) = ts[h][i];
    }
  }

  Tape& tp = params.tape();
  // Sample points are differentiable leaves: surface normals are gradients
  // with respect to position even at inference.
  Var Xv = tp.leaf(std::move(X), /*requires_grad=*/true);
  FieldEvalOptions fo = opt.field_opt;
  fo.final_gradient = true;  // the color network always consumes normals
  FieldEval fe = eval_fields(params, model, identity, Xv, fo);
  out.fields = fe;

  Var normals = surface_normal(fe.grad_s_hat);
  Var feats = assemble_features(fe, model.stage());
  const std::string& color_id =
      opt.color_identity.empty() ? identity : opt.color_identity;
  Var rgb = radiance(params, model, color_id, Xv, tp.constant(std::move(V)),
                     feats, normals);  // [P,3]

  Var sigma = reshape(
      s_density(fe.s_hat, params(kLogAlpha), params(kLogBeta)), H, S);
  out.sigma_var = sigma;
  out.us = us;
  Var su = mul(sigma, tp.constant(us));  // [H,S]
  Var trans = exp(neg(cumsum_exclusive(su)));
  Var absorb = sub(tp.constant(Tensor::full(1, 1, 1.0)), exp(neg(su)));
  Var w = mul(trans, absorb);  // [H,S]

  // Per-channel colors: C_c = sum_i w_i * rgb_i,c (+ background through the
  // leftover transmittance).
  std::array<Var, 3> chans;
  for (int c = 0; c < 3; ++c)
    chans[c] = sum_rows(mul(w, reshape(slice_cols(rgb, c, c + 1), H, S)));
  Var opacity = sum_rows(w);  // [H,1]
  Var leftover = sub(tp.constant(Tensor::full(1, 1, 1.0)), opacity);
  Tensor bg = Tensor::zeros(1, 3);
  for (int k = 0; k < 3; ++k) bg.data[k] = opt.background[k];
  Var color = add(concat_cols(chans),
                  mul(leftover, tp.constant(std::move(bg))));  // [H,3]

  out.color_var = color;
  out.opacity_var = opacity;
  out.weights_var = w;

  const Tensor cv = color.val();
  const Tensor ov = opacity.val();
  const Tensor wv = w.val();
  const Tensor tv = trans.val();
  for (int h = 0; h < H; ++h) {
    const int r = out.hit_rows[h];
    for (int k = 0; k < 3; ++k) out.color.at(r, k) = cv.at(h, k);
    out.opacity.at(r, 0) = ov.at(h, 0);
    for (int i = 0; i < S; ++i) {
      out.weights.at(r, i) = wv.at(h, i);
      out.transmittance.at(r, i) = tv.at(h, i);
    }
  }
  return out;
}

std::array<double, 3> render_pixel(const HeadModel& model,
                                   const std::string& identity,
                                   const Camera& cam, int row, int col,
                                   const RenderOptions& opt, Rng& rng) {
  const Ray ray = make_ray(cam, row, col, opt.scene_radius);
  Tape tape;
  // Parameters bind as constants; only the sample-point leaf carries grads
  // (for normals).
  ParamBinding binding(tape, const_cast<HeadModel&>(model).params,
                       /*frozen_all=*/true);
  RayBatchRender rb =
      render_rays(binding, model, identity, std::span<const Ray>(&ray, 1), opt,
                  rng);
  return {rb.color.at(0, 0), rb.color.at(0, 1), rb.color.at(0, 2)};
}

Tensor render_image(const HeadModel& model, const std::string& identity,
                    const Camera& cam, const RenderOptions& opt, Rng& rng) {
  cam.validate();
  const std::vector<Ray> rays = generate_rays(cam, opt.scene_radius);
  const int64_t n = static_cast<int64_t>(rays.size());
  Tensor img = Tensor::zeros(n, 3);

  const int S = opt.n_coarse + opt.n_fine;
  const int hidden = model.config().hidden;
  // Tape memory scales with (points x width); budget the chunk so a full
  // default-size model stays within a few hundred MB.
  const int chunk = static_cast<int>(
      std::clamp<int64_t>((1 << 18) / std::max(1, hidden * S), 1, 4096));
  ParameterStore& store = const_cast<HeadModel&>(model).params;
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t count = std::min<int64_t>(chunk, n - start);
    Tape tape;
    ParamBinding binding(tape, store, /*frozen_all=*/true);
    RayBatchRender rb = render_rays(
        binding, model, identity,
        std::span<const Ray>(rays.data() + start, count), opt, rng);
    for (int64_t r = 0; r < count; ++r)
      for (int k = 0; k < 3; ++k) img.at(start + r, k) = rb.color.at(r, k);
  }
  return img;
}

}  // namespace headsdf
