#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <vector>

#include "core/fields.hpp"
#include "core/losses.hpp"
#include "core/renderer.hpp"

namespace headsdf {

namespace {

constexpr double kFirstOrderTol = 1e-5;
constexpr double kSecondOrderTol = 1e-4;

ModelConfig toy_model_config() {
  ModelConfig m;
  m.code_dim = 6;
  m.hidden = 12;
  m.feat_deform = 4;
  m.feat_template = 4;
  m.feat_displacement = 3;
  m.deform_layers = 2;
  m.template_layers = 3;
  m.displacement_layers = 2;
  m.render_layers_stage1 = 3;
  m.render_layers_stage2 = 5;
  m.template_skip = 2;
  m.render_skip_stage2 = 2;
  m.pe_deform = 1;
  m.pe_template = 1;
  m.pe_displacement = 2;
  m.pe_render_point_stage1 = 1;
  m.pe_render_view_stage1 = 1;
  m.pe_render_point_stage2 = 2;
  m.pe_render_view_stage2 = 2;
  return m;
}

// Loss builders return the taped scalar for the current parameter values.
using LossBuilder = std::function<Var(Tape&, ParamBinding&)>;

struct TermResult {
  std::string name;
  bool second_order = false;
  double max_rel = 0.0;
  int checks = 0;
};

TermResult check_term(HeadModel& model, const std::string& name,
                      bool second_order, const LossBuilder& builder) {
  // Analytic gradients for every parameter, in one backward pass.
  model.params.zero_grads();
  {
    Tape tape;
    ParamBinding binding(tape, model.params);
    backward_into_store(builder(tape, binding), binding);
  }
  std::map<std::string, Tensor> analytic;
  for (const std::string& pname : model.params.names())
    analytic[pname] = model.params.grad(pname);

  auto eval = [&]() {
    Tape tape;
    ParamBinding binding(tape, model.params);
    return builder(tape, binding).scalar_value();
  };

  TermResult res{name, second_order, 0.0, 0};
  for (const std::string& pname : model.params.names()) {
    Tensor& value = model.params.value(pname);
    const Tensor& grads = analytic.at(pname);
    const size_t n = value.data.size();
    size_t picks[3] = {0, n / 2, n - 1};
    for (int k = 0; k < 3; ++k) {
      const size_t i = picks[k];
      if (k == 1 && i == picks[0]) continue;
      if (k == 2 && (i == picks[0] || i == picks[1])) continue;
      const double saved = value.data[i];
      const double h = 1e-6 * std::max(1.0, std::abs(saved));
      value.data[i] = saved + h;
      const double up = eval();
      value.data[i] = saved - h;
      const double down = eval();
      value.data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = grads.data[i];
      const double rel =
          std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      res.max_rel = std::max(res.max_rel, rel);
      ++res.checks;
    }
  }
  return res;
}

}  // namespace

GradCheckReport run_gradient_checks(uint64_t seed) {
  const std::string id = "probe";
  HeadModel model(toy_model_config(), {id}, seed);
  if (!model.promote())
    throw NumericError("gradient check: toy model promotion failed");

  // Noise on every parameter: breaks the zero-initialized heads so the
  // displacement terms have nonzero operands (|x| is not differentiable at
  // zero) and de-symmetrizes the color network.
  Rng noise(seed ^ 0x517cc1b727220a95ull);
  for (const std::string& pname : model.params.names())
    for (double& v : model.params.value(pname).data) v += 0.05 * noise.normal();

  // Fixed probe points inside the scene.
  Rng probe_rng(seed + 1);
  const int n_probes = 6;
  Tensor probes(n_probes, 3);
  for (double& v : probes.data) v = probe_rng.uniform(-0.6, 0.6);

  // A handful of rays through the image center. Fine sampling is disabled so
  // the sample positions do not depend on the parameters; otherwise finite
  // differences would see the importance-resampled positions move.
  Camera cam;
  cam.width = 6;
  cam.height = 6;
  cam.K = {7.2, 0.0, 3.0, 0.0, 7.2, 3.0, 0.0, 0.0, 1.0};
  cam.cam2world = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, -2.2, 0, 0, 0, 1};
  RenderOptions ro;
  ro.n_coarse = 8;
  ro.n_fine = 0;
  ro.jitter = false;
  std::vector<Ray> rays;
  for (int i = 2; i <= 3; ++i)
    for (int j = 2; j <= 3; ++j) rays.push_back(make_ray(cam, i, j, 1.5));
  Tensor gt(static_cast<int64_t>(rays.size()), 3);
  for (double& v : gt.data) v = probe_rng.uniform();

  auto fields_at_probes = [&](Tape& tape, ParamBinding& b,
                              bool final_gradient) {
    FieldEvalOptions fo;
    fo.final_gradient = final_gradient;
    return eval_fields(b, model, id, tape.leaf(probes, true), fo);
  };

  const LossBuilder color = [&](Tape& tape, ParamBinding& b) {
    Rng r(0);
    RayBatchRender rb = render_rays(b, model, id, rays, ro, r);
    Tensor gt_hits(static_cast<int64_t>(rb.hit_rows.size()), 3);
    for (size_t h = 0; h < rb.hit_rows.size(); ++h)
      for (int c = 0; c < 3; ++c)
        gt_hits.at(static_cast<int64_t>(h), c) = gt.at(rb.hit_rows[h], c);
    return color_loss(rb.color_var, tape.constant(std::move(gt_hits)), 0.7);
  };
  const LossBuilder deform_magnitude = [&](Tape& tape, ParamBinding& b) {
    FieldEval fe = fields_at_probes(tape, b, false);
    return deformation_loss(fe.d, spatial_jacobian(fe.d, fe.x), 0.9, 0.0);
  };
  const LossBuilder deform_smoothness = [&](Tape& tape, ParamBinding& b) {
    FieldEval fe = fields_at_probes(tape, b, false);
    return deformation_loss(fe.d, spatial_jacobian(fe.d, fe.x), 0.0, 0.8);
  };
  const LossBuilder eikonal = [&](Tape& tape, ParamBinding& b) {
    FieldEval fe = fields_at_probes(tape, b, true);
    return eikonal_loss(fe.grad_s_hat, 0.6);
  };
  const LossBuilder displacement_magnitude = [&](Tape& tape, ParamBinding& b) {
    FieldEval fe = fields_at_probes(tape, b, false);
    return displacement_loss(fe.delta, spatial_gradient(fe.delta, fe.x), 0.5,
                             0.0);
  };
  const LossBuilder displacement_smoothness = [&](Tape& tape, ParamBinding& b) {
    FieldEval fe = fields_at_probes(tape, b, false);
    return displacement_loss(fe.delta, spatial_gradient(fe.delta, fe.x), 0.0,
                             0.4);
  };
  const LossBuilder code = [&](Tape& tape, ParamBinding& b) {
    (void)tape;
    return code_loss(b(HeadModel::shape_code_name(id)),
                     b(HeadModel::color_code_name(id)), 0.3);
  };

  const std::vector<std::pair<std::pair<std::string, bool>, LossBuilder>>
      terms = {
          {{"color", false}, color},
          {{"deformation magnitude", false}, deform_magnitude},
          {{"deformation smoothness", true}, deform_smoothness},
          {{"eikonal", true}, eikonal},
          {{"displacement magnitude", false}, displacement_magnitude},
          {{"displacement smoothness", true}, displacement_smoothness},
          {{"code", false}, code},
      };

  GradCheckReport report;
  for (const auto& [meta, builder] : terms) {
    const TermResult r = check_term(model, meta.first, meta.second, builder);
    if (r.second_order)
      report.max_second_order = std::max(report.max_second_order, r.max_rel);
    else
      report.max_first_order = std::max(report.max_first_order, r.max_rel);
    report.checks += r.checks;
    char line[160];
    std::snprintf(line, sizeof(line),
                  "%-24s %s-order  entries %4d  max rel err %.3e\n",
                  r.name.c_str(), r.second_order ? "second" : " first",
                  r.checks, r.max_rel);
    report.text += line;
  }
  report.pass = report.max_first_order < kFirstOrderTol &&
                report.max_second_order < kSecondOrderTol;
  char tail[160];
  std::snprintf(tail, sizeof(tail),
                "first-order max %.3e (tol %.0e), second-order max %.3e "
                "(tol %.0e): %s\n",
                report.max_first_order, kFirstOrderTol,
                report.max_second_order, kSecondOrderTol,
                report.pass ? "PASS" : "FAIL");
  report.text += tail;
  return report;
}

}  // namespace headsdf
