#include "core/fields.hpp"

#include <cmath>

namespace headsdf {

namespace {

constexpr const char* kDeform = "deform";
constexpr const char* kTemplate = "template";
constexpr const char* kDisplace = "displace";
constexpr const char* kRender = "render";

std::vector<int> uniform_widths(int in, int hidden, int out, int layers) {
  std::vector<int> w;
  w.push_back(in);
  for (int l = 1; l < layers; ++l) w.push_back(hidden);
  w.push_back(out);
  return w;
}

}  // namespace

std::string HeadModel::shape_code_name(const std::string& id) {
  return "code/shape/" + id;
}
std::string HeadModel::color_code_name(const std::string& id) {
  return "code/color/" + id;
}

PositionalEncodingSpec HeadModel::pe_deform() const {
  return {cfg_.pe_deform, true};
}
PositionalEncodingSpec HeadModel::pe_template() const {
  return {cfg_.pe_template, true};
}
PositionalEncodingSpec HeadModel::pe_displacement() const {
  return {cfg_.pe_displacement, true};
}
PositionalEncodingSpec HeadModel::pe_render_point() const {
  return {stage_ == kStageTwo ? cfg_.pe_render_point_stage2
                              : cfg_.pe_render_point_stage1,
          true};
}
PositionalEncodingSpec HeadModel::pe_render_view() const {
  return {stage_ == kStageTwo ? cfg_.pe_render_view_stage2
                              : cfg_.pe_render_view_stage1,
          true};
}

MlpSpec HeadModel::deform_spec() const {
  MlpSpec s;
  s.widths = uniform_widths(pe_deform().out_dim(3) + cfg_.code_dim, cfg_.hidden,
                            3 + cfg_.feat_deform, cfg_.deform_layers);
  s.activation = Activation::kSoftplusSharp;
  return s;
}

MlpSpec HeadModel::template_spec() const {
  MlpSpec s;
  s.widths = uniform_widths(pe_template().out_dim(3), cfg_.hidden,
                            1 + cfg_.feat_template, cfg_.template_layers);
  s.skip_layers = {cfg_.template_skip};
  s.activation = Activation::kSoftplusSharp;
  return s;
}

MlpSpec HeadModel::displacement_spec() const {
  MlpSpec s;
  s.widths = uniform_widths(
      pe_displacement().out_dim(3) + cfg_.feat_template + cfg_.feat_deform,
      cfg_.hidden, 1 + cfg_.feat_displacement, cfg_.displacement_layers);
  s.activation = Activation::kSoftplusSharp;
  return s;
}

MlpSpec HeadModel::render_spec() const {
  const int features = cfg_.feat_deform + cfg_.feat_template +
                       (stage_ == kStageTwo ? cfg_.feat_displacement : 0);
  const int in = pe_render_point().out_dim(3) + pe_render_view().out_dim(3) +
                 cfg_.code_dim + features + 3;
  MlpSpec s;
  s.widths = uniform_widths(in, cfg_.hidden, 3,
                            stage_ == kStageTwo ? cfg_.render_layers_stage2
                                                : cfg_.render_layers_stage1);
  if (stage_ == kStageTwo) s.skip_layers = {cfg_.render_skip_stage2};
  s.activation = Activation::kRelu;
  // The input layout gains columns at promotion; serial accumulation keeps
  // the widened first layer exactly equal on the surviving columns.
  s.first_layer_serial = true;
  return s;
}

HeadModel::HeadModel(const ModelConfig& cfg, std::vector<std::string> identity_ids,
                     uint64_t seed)
    : cfg_(cfg), ids_(std::move(identity_ids)), seed_(seed) {
  cfg_.validate();
  Rng root(seed);
  init_mlp_zero_head(params, kDeform, deform_spec(), root.fork("deform"));
  GeometricInitOptions geo;
  geo.raw_dims = 3;
  geo.sphere_radius = cfg_.init_sphere_radius;
  init_mlp_geometric(params, kTemplate, template_spec(), geo,
                     root.fork("template"));
  init_mlp_fan_in(params, kRender, render_spec(), root.fork("render"));
  params.create("density/log_alpha", Tensor::scalar(std::log(cfg_.init_alpha)));
  params.create("density/log_beta", Tensor::scalar(std::log(cfg_.init_beta)));
  for (const std::string& id : ids_) {
    Rng cr = root.fork("code:" + id);
    Tensor zs(1, cfg_.code_dim), zc(1, cfg_.code_dim);
    for (double& v : zs.data) v = 0.01 * cr.normal();
    for (double& v : zc.data) v = 0.01 * cr.normal();
    params.create(shape_code_name(id), std::move(zs));
    params.create(color_code_name(id), std::move(zc));
  }
}

bool HeadModel::has_identity(const std::string& id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

void HeadModel::add_identity(const std::string& id) {
  if (has_identity(id)) throw UsageError("identity already present: " + id);
  ids_.push_back(id);
  params.create(shape_code_name(id), Tensor::zeros(1, cfg_.code_dim));
  params.create(color_code_name(id), Tensor::zeros(1, cfg_.code_dim));
}

double HeadModel::alpha() const {
  return std::exp(params.value("density/log_alpha").data[0]);
}
double HeadModel::beta() const {
  return std::exp(params.value("density/log_beta").data[0]);
}

bool HeadModel::promote() {
  if (stage_ == kStageTwo) return false;

  const MlpSpec old_spec = render_spec();
  const int old_layers = old_spec.num_layers();
  std::vector<Tensor> oldW, oldB;
  for (int l = 1; l <= old_layers; ++l) {
    oldW.push_back(params.value(mlp_weight_name(kRender, l)));
    oldB.push_back(params.value(mlp_bias_name(kRender, l)));
    params.remove(mlp_weight_name(kRender, l));
    params.remove(mlp_bias_name(kRender, l));
  }

  stage_ = kStageTwo;
  const MlpSpec new_spec = render_spec();
  new_spec.validate();

  // Input column segments [old width -> new width]; widened encodings append
  // columns inside their segment, the displacement features are entirely new.
  struct Seg {
    int old_w, new_w;
  };
  const std::vector<Seg> segs = {
      {3 * (2 * cfg_.pe_render_point_stage1 + 1),
       3 * (2 * cfg_.pe_render_point_stage2 + 1)},
      {3 * (2 * cfg_.pe_render_view_stage1 + 1),
       3 * (2 * cfg_.pe_render_view_stage2 + 1)},
      {cfg_.code_dim, cfg_.code_dim},
      {cfg_.feat_deform, cfg_.feat_deform},
      {cfg_.feat_template, cfg_.feat_template},
      {0, cfg_.feat_displacement},
      {3, 3},
  };
  const int new_in = new_spec.widths.front();
  {
    int total_old = 0, total_new = 0;
    for (const Seg& s : segs) {
      total_old += s.old_w;
      total_new += s.new_w;
    }
    if (total_old != old_spec.widths.front() || total_new != new_in) {
      throw UsageError("promotion: input segment bookkeeping is inconsistent");
    }
  }

  // New first layer: surviving columns keep their weights, new columns silent.
  Tensor W1(new_in, old_spec.widths[1]);
  {
    int oo = 0, no = 0;
    for (const Seg& s : segs) {
      for (int p = 0; p < s.old_w; ++p) {
        for (int64_t j = 0; j < W1.cols(); ++j) {
          W1.at(no + p, j) = oldW[0].at(oo + p, j);
        }
      }
      oo += s.old_w;
      no += s.new_w;
    }
  }

  // Layer plan: prefix of old layers, then a pass-through skip layer and a
  // pass-through plain layer, then the remaining old layers. With the relu
  // activation both inserted layers reproduce their input exactly.
  const int k = cfg_.render_skip_stage2;
  auto identity_block = [&](int rows_extra) {
    const int h = cfg_.hidden;
    Tensor W(h + rows_extra, h);
    for (int j = 0; j < h; ++j) W.at(j, j) = 1.0;
    return W;
  };

  int old_idx = 0;
  for (int l = 1; l <= new_spec.num_layers(); ++l) {
    Tensor W, b;
    if (l == 1) {
      W = std::move(W1);
      b = oldB[0];
      old_idx = 1;
    } else if (l == k) {
      W = identity_block(new_in);  // skip layer input is [h | raw input]
      b = Tensor::zeros(1, cfg_.hidden);
    } else if (l == k + 1) {
      W = identity_block(0);
      b = Tensor::zeros(1, cfg_.hidden);
    } else {
      W = oldW[old_idx];
      b = oldB[old_idx];
      ++old_idx;
    }
    params.create(mlp_weight_name(kRender, l), std::move(W));
    params.create(mlp_bias_name(kRender, l), std::move(b));
  }
  if (old_idx != old_layers) {
    throw UsageError("promotion: layer bookkeeping is inconsistent");
  }

  init_mlp_zero_head(params, kDisplace, displacement_spec(),
                     Rng(seed_).fork("displace"));
  return true;
}

FieldEval eval_fields(ParamBinding& params, const HeadModel& model,
                      const std::string& identity, Var X,
                      const FieldEvalOptions& opt) {
  if (X.cols() != 3) throw UsageError("eval_fields: points must be [N,3]");
  if (!model.has_identity(identity)) {
    throw UsageError("unknown identity: " + identity);
  }
  const ModelConfig& c = model.config();
  const int64_t N = X.rows();

  FieldEval out;
  out.x = X;

  Var zs = broadcast_rows(params(HeadModel::shape_code_name(identity)), N);
  Var din = concat_cols(positional_encode(X, model.pe_deform()), zs);
  Var dout = mlp_forward(model.deform_spec(), params, kDeform, din);
  out.d = slice_cols(dout, 0, 3);
  out.f_def = slice_cols(dout, 3, 3 + c.feat_deform);
  out.y = add(X, out.d);

  Var tout = mlp_forward(model.template_spec(), params, kTemplate,
                         positional_encode(out.y, model.pe_template()));
  out.s = slice_cols(tout, 0, 1);
  out.f_tem = slice_cols(tout, 1, 1 + c.feat_template);

  if (model.stage() == HeadModel::kStageTwo) {
    Var ft = opt.detach_displacement_inputs ? detach(out.f_tem) : out.f_tem;
    Var fd = opt.detach_displacement_inputs ? detach(out.f_def) : out.f_def;
    const std::vector<Var> parts{positional_encode(X, model.pe_displacement()),
                                 ft, fd};
    Var dis = mlp_forward(model.displacement_spec(), params, kDisplace,
                          concat_cols(parts));
    out.delta = slice_cols(dis, 0, 1);
    out.f_dis = slice_cols(dis, 1, 1 + c.feat_displacement);
    out.s_hat = add(out.s, out.delta);
  } else {
    out.s_hat = out.s;
  }

  const bool stage1 = model.stage() == HeadModel::kStageOne;
  if (opt.base_gradient || (stage1 && opt.final_gradient)) {
    out.grad_s = spatial_gradient(out.s, X);
  }
  if (opt.final_gradient) {
    out.grad_s_hat = stage1 ? out.grad_s : spatial_gradient(out.s_hat, X);
  }
  return out;
}

Var assemble_features(const FieldEval& fe, int stage) {
  if (stage == HeadModel::kStageTwo) {
    if (!fe.f_dis.valid()) {
      throw UsageError("assemble_features: stage-2 features missing");
    }
    const std::vector<Var> parts{fe.f_def, fe.f_tem, fe.f_dis};
    return concat_cols(parts);
  }
  return concat_cols(fe.f_def, fe.f_tem);
}

Var surface_normal(Var g) {
  // sqrt(sum g^2 + tiny) never vanishes; a zero gradient maps to the zero
  // vector rather than NaN.
  Var norm = sqrt(add_scalar(sum_rows(square(g)), 1e-24));
  return div(g, norm);
}

Var radiance(ParamBinding& params, const HeadModel& model,
             const std::string& identity, Var X, Var V, Var features,
             Var normals) {
  if (!model.has_identity(identity)) {
    throw UsageError("unknown identity: " + identity);
  }
  const int64_t N = X.rows();
  if (V.rows() != N || V.cols() != 3 || normals.rows() != N ||
      normals.cols() != 3) {
    throw UsageError("radiance: view/normal shape mismatch");
  }
  Var zc = broadcast_rows(params(HeadModel::color_code_name(identity)), N);
  const std::vector<Var> parts{positional_encode(X, model.pe_render_point()),
                               positional_encode(V, model.pe_render_view()), zc,
                               features, normals};
  Var out = mlp_forward(model.render_spec(), params, kRender,
                        concat_cols(parts));
  return sigmoid(out);
}

}  // namespace headsdf
