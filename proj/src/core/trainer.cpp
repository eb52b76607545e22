#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "core/checkpoint.hpp"
#include "core/losses.hpp"

namespace headsdf {

namespace {

// Upper bound on how many render sample positions are pooled per identity
// per step as regularizer probe candidates.
constexpr size_t kMaxPoolPoints = 1 << 16;

std::array<double, 3> sample_ball(double radius, Rng& rng) {
  double x = rng.normal();
  double y = rng.normal();
  double z = rng.normal();
  double n = std::sqrt(x * x + y * y + z * z);
  if (n < 1e-12) {
    x = 1.0;
    y = 0.0;
    z = 0.0;
    n = 1.0;
  }
  const double r = radius * std::cbrt(rng.uniform());
  return {r * x / n, r * y / n, r * z / n};
}

std::vector<RaySample> sample_batch_indices(const TrainingSet& data,
                                            std::span<const int> identity_indices,
                                            int n, Rng& rng) {
  std::vector<RaySample> batch;
  batch.reserve(static_cast<size_t>(n));
  const int64_t k = static_cast<int64_t>(identity_indices.size());
  for (int i = 0; i < n; ++i) {
    RaySample s;
    s.identity = identity_indices[static_cast<size_t>(rng.index(k))];
    const TrainingSet::Identity& ident = data.identity(s.identity);
    s.view = static_cast<int>(rng.index(static_cast<int64_t>(ident.views.size())));
    const TrainingSet::View& view = ident.views[static_cast<size_t>(s.view)];
    s.pixel = static_cast<int>(
        rng.index(static_cast<int64_t>(view.camera.width) * view.camera.height));
    batch.push_back(s);
  }
  return batch;
}

std::vector<int> resolve_identities(const TrainingSet& data,
                                    std::span<const std::string> identities) {
  if (identities.empty())
    throw UsageError("training: empty identity list");
  std::vector<int> indices;
  indices.reserve(identities.size());
  for (const std::string& id : identities)
    indices.push_back(data.identity_index(id));
  return indices;
}

void require_model_knows(const HeadModel& model, const TrainingSet& data,
                         std::span<const int> identity_indices) {
  for (int idx : identity_indices) {
    const std::string& id = data.identity(idx).id;
    if (!model.has_identity(id))
      throw UsageError("training: model has no identity \"" + id + "\"");
  }
}

StepStats train_step_impl(HeadModel& model, const TrainingSet& data,
                          std::span<const int> identity_indices,
                          const Config& cfg, AdamState& adam, int64_t step,
                          int64_t total_steps, Rng& rng) {
  const TrainConfig& tc = cfg.train;
  const LossWeights& w = tc.weights;
  const bool stage2 = model.stage() == HeadModel::kStageTwo;

  model.params.zero_grads();

  const std::vector<RaySample> batch =
      sample_batch_indices(data, identity_indices, tc.rays_per_step, rng);

  // Group the batch by identity, following the order of identity_indices;
  // within a group the original batch order is kept.
  std::vector<std::vector<RaySample>> groups(identity_indices.size());
  for (const RaySample& s : batch) {
    for (size_t g = 0; g < identity_indices.size(); ++g) {
      if (identity_indices[g] == s.identity) {
        groups[g].push_back(s);
        break;
      }
    }
  }
  int present = 0;
  for (const auto& g : groups)
    if (!g.empty()) ++present;

  RenderOptions ro;
  ro.n_coarse = cfg.render.n_coarse;
  ro.n_fine = cfg.render.n_fine;
  ro.jitter = cfg.render.jitter_training;
  ro.background = cfg.render.background;
  ro.scene_radius = cfg.render.scene_radius;

  const double color_w = w.color / tc.rays_per_step;

  StepStats st;
  std::vector<std::vector<std::array<double, 3>>> pools(identity_indices.size());

  // Color pass: chunked renders, gradient accumulation per chunk. Rays that
  // miss the scene sphere render as the exact background with no parameter
  // dependence, so they enter the logged value as constants only.
  for (size_t g = 0; g < identity_indices.size(); ++g) {
    if (groups[g].empty()) continue;
    const TrainingSet::Identity& ident = data.identity(identity_indices[g]);

    std::vector<Ray> rays;
    std::vector<std::array<double, 3>> gts;
    rays.reserve(groups[g].size());
    gts.reserve(groups[g].size());
    for (const RaySample& s : groups[g]) {
      const TrainingSet::View& view = ident.views[static_cast<size_t>(s.view)];
      const int row = s.pixel / view.camera.width;
      const int col = s.pixel % view.camera.width;
      rays.push_back(make_ray(view.camera, row, col, cfg.render.scene_radius));
      gts.push_back({view.image.at(s.pixel, 0), view.image.at(s.pixel, 1),
                     view.image.at(s.pixel, 2)});
    }

    for (size_t begin = 0; begin < rays.size(); begin += tc.ray_chunk) {
      const size_t end = std::min(rays.size(), begin + tc.ray_chunk);
      const size_t count = end - begin;

      Tape tape;
      ParamBinding binding(tape, model.params);
      RayBatchRender rb =
          render_rays(binding, model, ident.id,
                      std::span<const Ray>(rays.data() + begin, count), ro, rng);

      std::vector<char> is_hit(count, 0);
      const size_t n_hits = rb.hit_rows.size();
      if (n_hits > 0) {
        Tensor gt_hits(static_cast<int64_t>(n_hits), 3);
        for (size_t h = 0; h < n_hits; ++h) {
          const size_t r = static_cast<size_t>(rb.hit_rows[h]);
          is_hit[r] = 1;
          for (int c = 0; c < 3; ++c)
            gt_hits.at(static_cast<int64_t>(h), c) = gts[begin + r][c];
        }
        Var chunk_col = scale(
            sum_all(abs(sub(rb.color_var, tape.constant(std::move(gt_hits))))),
            color_w);
        backward_into_store(chunk_col, binding);
        st.col += chunk_col.scalar_value();

        auto& pool = pools[g];
        const Tensor& x = rb.fields.x.val();
        for (int64_t i = 0; i < x.rows() && pool.size() < kMaxPoolPoints; ++i)
          pool.push_back({x.at(i, 0), x.at(i, 1), x.at(i, 2)});
      }
      for (size_t r = 0; r < count; ++r) {
        if (is_hit[r]) continue;
        double e = 0.0;
        for (int c = 0; c < 3; ++c)
          e += std::abs(ro.background[c] - gts[begin + r][c]);
        st.col += color_w * e;
      }
    }
  }

  // Regularizer pass: one probe tape per identity present in the batch. The
  // weights are divided by the number of identities probed so the logged
  // terms stay averages rather than sums over identities.
  const double inv_g = present > 0 ? 1.0 / present : 0.0;
  for (size_t g = 0; g < identity_indices.size(); ++g) {
    if (groups[g].empty()) continue;
    const TrainingSet::Identity& ident = data.identity(identity_indices[g]);
    const auto& pool = pools[g];

    const int n_probes = tc.regularizer_points;
    const int n_surface = pool.empty() ? 0 : n_probes / 2;
    Tensor probes(n_probes, 3);
    for (int i = 0; i < n_probes - n_surface; ++i) {
      const std::array<double, 3> p = sample_ball(cfg.render.scene_radius, rng);
      for (int c = 0; c < 3; ++c) probes.at(i, c) = p[c];
    }
    for (int i = n_probes - n_surface; i < n_probes; ++i) {
      const std::array<double, 3>& p =
          pool[static_cast<size_t>(rng.index(static_cast<int64_t>(pool.size())))];
      for (int c = 0; c < 3; ++c) probes.at(i, c) = p[c];
    }

    Tape tape;
    ParamBinding binding(tape, model.params);
    Var xv = tape.leaf(std::move(probes), true);
    FieldEvalOptions fo;
    fo.final_gradient = true;
    FieldEval fe = eval_fields(binding, model, ident.id, xv, fo);

    Var def = deformation_loss(fe.d, spatial_jacobian(fe.d, fe.x),
                               w.deform_magnitude * inv_g,
                               w.deform_smoothness * inv_g);
    Var eik = eikonal_loss(fe.grad_s_hat, w.eikonal * inv_g);
    Var reg = add(def, eik);
    if (stage2) {
      Var dis = displacement_loss(fe.delta, spatial_gradient(fe.delta, fe.x),
                                  w.displacement_magnitude * inv_g,
                                  w.displacement_smoothness * inv_g);
      st.dis += dis.scalar_value();
      reg = add(reg, dis);
    }
    Var cod = code_loss(binding(HeadModel::shape_code_name(ident.id)),
                        binding(HeadModel::color_code_name(ident.id)),
                        w.code * inv_g);
    reg = add(reg, cod);
    backward_into_store(reg, binding);

    st.def += def.scalar_value();
    st.eik += eik.scalar_value();
    st.cod += cod.scalar_value();
  }

  st.total = st.col + st.def + st.eik + st.dis + st.cod;
  st.finite = std::isfinite(st.col) && std::isfinite(st.def) &&
              std::isfinite(st.eik) && std::isfinite(st.dis) &&
              std::isfinite(st.cod) && std::isfinite(st.total);
  if (!st.finite) return st;

  st.lr = lr_schedule(tc.lr0, tc.lr_final_factor, step, total_steps);
  adam_step(model.params, adam, st.lr);
  return st;
}

void write_log_header(std::ofstream& log) {
  log << "step,lr,color,deform,eikonal,displacement,code,total\n";
}

void write_log_row(std::ofstream& log, int64_t step, const StepStats& st) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<long long>(step), st.lr, st.col, st.def, st.eik,
                st.dis, st.cod, st.total);
  log << buf;
}

TrainResult run_loop(HeadModel& model, const TrainingSet& data,
                     std::span<const int> identity_indices, const Config& cfg,
                     int64_t steps, Rng& rng,
                     const std::string& checkpoint_path,
                     const std::string& log_path) {
  AdamState adam;  // every stage starts with fresh moments
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw DataError("training: cannot open log file: " + log_path);
    write_log_header(log);
  }

  TrainResult res;
  for (int64_t step = 0; step < steps; ++step) {
    ParameterStore before = model.params;
    AdamState adam_before = adam;

    StepStats st;
    bool threw = false;
    try {
      st = train_step_impl(model, data, identity_indices, cfg, adam, step,
                           steps, rng);
    } catch (const NumericError&) {
      threw = true;
    }
    if (threw || !st.finite) {
      model.params = std::move(before);
      adam = std::move(adam_before);
      res.aborted = true;
      break;
    }

    if (step == 0) res.initial_total = st.total;
    res.final_total = st.total;
    res.steps = step + 1;
    if (log.is_open() && (step % cfg.train.log_every == 0 || step == steps - 1))
      write_log_row(log, step, st);
  }
  if (log.is_open()) log.flush();
  if (!checkpoint_path.empty())
    save_checkpoint(checkpoint_path, model, cfg, res.steps, &adam);
  return res;
}

}  // namespace

TrainingSet::TrainingSet(const DatasetManifest& manifest,
                         std::vector<std::string> identity_ids,
                         int views_per_identity) {
  if (views_per_identity < 0)
    throw UsageError("training: views_per_identity must be >= 0");
  if (identity_ids.empty()) identity_ids = manifest.identity_ids();
  if (identity_ids.empty()) throw UsageError("training: empty dataset");
  for (const std::string& id : identity_ids) {
    const IdentityEntry& entry = manifest.identity(id);
    size_t n_views = entry.views.size();
    if (views_per_identity > 0)
      n_views = std::min(n_views, static_cast<size_t>(views_per_identity));
    if (n_views == 0)
      throw UsageError("training: identity \"" + id + "\" has no views");
    Identity ident;
    ident.id = id;
    ident.views.reserve(n_views);
    for (size_t v = 0; v < n_views; ++v)
      ident.views.push_back({entry.views[v].camera,
                             load_view_image(entry.views[v])});
    identities_.push_back(std::move(ident));
    ids_.push_back(id);
  }
}

int TrainingSet::identity_index(const std::string& id) const {
  for (size_t i = 0; i < ids_.size(); ++i)
    if (ids_[i] == id) return static_cast<int>(i);
  throw UsageError("training: unknown identity \"" + id + "\"");
}

std::vector<RaySample> sample_ray_batch(const TrainingSet& data,
                                        std::span<const std::string> identities,
                                        int n, Rng& rng) {
  if (n <= 0) throw UsageError("training: batch size must be positive");
  const std::vector<int> indices = resolve_identities(data, identities);
  return sample_batch_indices(data, indices, n, rng);
}

StepStats train_step(HeadModel& model, const TrainingSet& data,
                     std::span<const std::string> identities,
                     const Config& cfg, AdamState& adam, int64_t step,
                     int64_t total_steps, Rng& rng) {
  const std::vector<int> indices = resolve_identities(data, identities);
  require_model_knows(model, data, indices);
  return train_step_impl(model, data, indices, cfg, adam, step, total_steps,
                         rng);
}

TrainResult train_stage1(HeadModel& model, const TrainingSet& data,
                         const Config& cfg, Rng& rng,
                         const std::string& checkpoint_path,
                         const std::string& log_path) {
  if (model.stage() != HeadModel::kStageOne)
    throw UsageError("training: joint template fitting needs a stage-1 model");
  std::vector<int> indices(static_cast<size_t>(data.identity_count()));
  for (int i = 0; i < data.identity_count(); ++i) indices[static_cast<size_t>(i)] = i;
  require_model_knows(model, data, indices);
  for (const std::string& name : model.params.names())
    model.params.set_trainable(name, true);
  return run_loop(model, data, indices, cfg, cfg.train.stage1_steps, rng,
                  checkpoint_path, log_path);
}

bool promote_to_stage2(HeadModel& model) {
  if (!model.promote()) {
    std::fprintf(stderr,
                 "warning: model is already in stage 2; promotion skipped\n");
    return false;
  }
  return true;
}

TrainResult train_stage2(HeadModel& model, const TrainingSet& data,
                         const std::string& identity, const Config& cfg,
                         Rng& rng, const std::string& checkpoint_path,
                         const std::string& log_path) {
  if (model.stage() != HeadModel::kStageTwo)
    throw UsageError("training: per-identity refinement needs a promoted model");
  const int index = data.identity_index(identity);
  if (!model.has_identity(identity))
    throw UsageError("training: model has no identity \"" + identity + "\"");

  const TrainConfig& tc = cfg.train;
  for (const std::string& name : model.params.names()) {
    bool trainable = true;
    if (name.rfind("template/", 0) == 0)
      trainable = tc.stage2_train_template;
    else if (name.rfind("deform/", 0) == 0)
      trainable = tc.stage2_train_deform;
    else if (name.rfind("code/", 0) == 0)
      trainable = tc.stage2_train_codes &&
                  (name == HeadModel::shape_code_name(identity) ||
                   name == HeadModel::color_code_name(identity));
    model.params.set_trainable(name, trainable);
  }

  const std::vector<int> indices = {index};
  return run_loop(model, data, indices, cfg, tc.stage2_steps, rng,
                  checkpoint_path, log_path);
}

TrainResult fit_unseen_identity(HeadModel& model, const TrainingSet& data,
                                const std::string& identity, const Config& cfg,
                                Rng& rng, const std::string& checkpoint_path,
                                const std::string& log_path) {
  if (model.stage() != HeadModel::kStageOne)
    throw UsageError(
        "training: unseen-identity fitting starts from a stage-1 model");
  if (model.has_identity(identity))
    throw UsageError("training: identity \"" + identity +
                     "\" is already part of the model");
  const int index = data.identity_index(identity);

  model.add_identity(identity);
  for (const std::string& name : model.params.names()) {
    const bool trainable = name.rfind("deform/", 0) == 0 ||
                           name == HeadModel::shape_code_name(identity) ||
                           name == HeadModel::color_code_name(identity);
    model.params.set_trainable(name, trainable);
  }

  const std::vector<int> indices = {index};
  return run_loop(model, data, indices, cfg, cfg.train.unseen_steps, rng,
                  checkpoint_path, log_path);
}

}  // namespace headsdf
