#include "core/nn.hpp"

#include <algorithm>
#include <cmath>

namespace headsdf {

Var positional_encode(Var x, const PositionalEncodingSpec& spec) {
  if (spec.num_frequencies < 0) {
    throw UsageError("positional_encode: negative frequency count");
  }
  std::vector<Var> parts;
  if (spec.include_input) parts.push_back(x);
  double freq = M_PI;  // 2^k * pi, k = 0..L-1
  for (int k = 0; k < spec.num_frequencies; ++k) {
    Var xs = scale(x, freq);
    parts.push_back(sin(xs));
    parts.push_back(cos(xs));
    freq *= 2.0;
  }
  if (parts.empty()) throw UsageError("positional_encode: empty encoding");
  return concat_cols(parts);
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw UsageError("MlpSpec: need at least one layer");
  for (int w : widths) {
    if (w <= 0) throw UsageError("MlpSpec: non-positive width");
  }
  for (int s : skip_layers) {
    if (s < 2 || s > num_layers() - 1) {
      throw UsageError("MlpSpec: skip layer must be interior");
    }
  }
}

int MlpSpec::layer_in_dim(int layer) const {
  int in = widths[layer - 1];
  if (std::find(skip_layers.begin(), skip_layers.end(), layer) !=
      skip_layers.end()) {
    in += widths[0];
  }
  return in;
}

ParameterStore::Entry& ParameterStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

const ParameterStore::Entry& ParameterStore::entry(
    const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw UsageError("unknown parameter: " + name);
  return it->second;
}

Tensor& ParameterStore::create(const std::string& name, Tensor init,
                               bool trainable) {
  if (entries_.count(name)) throw UsageError("duplicate parameter: " + name);
  Entry e;
  e.grad = Tensor::zeros(init.rows(), init.cols());
  e.value = std::move(init);
  e.trainable = trainable;
  return entries_.emplace(name, std::move(e)).first->second.value;
}

Tensor& ParameterStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParameterStore::value(const std::string& name) const {
  return entry(name).value;
}
Tensor& ParameterStore::grad(const std::string& name) { return entry(name).grad; }
bool ParameterStore::has(const std::string& name) const {
  return entries_.count(name) != 0;
}
void ParameterStore::remove(const std::string& name) {
  if (!entries_.erase(name)) throw UsageError("unknown parameter: " + name);
}
void ParameterStore::set_trainable(const std::string& name, bool trainable) {
  entry(name).trainable = trainable;
}
bool ParameterStore::trainable(const std::string& name) const {
  return entry(name).trainable;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (v.trainable) out.push_back(k);
  }
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& [k, v] : entries_) {
    std::fill(v.grad.data.begin(), v.grad.data.end(), 0.0);
  }
}

void ParameterStore::round_values_to_f32() {
  for (auto& [k, v] : entries_) v.value.round_to_f32();
}

Var ParamBinding::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const bool differentiable = !frozen_all_ && store_->trainable(name);
  Tensor copy = store_->value(name);
  Var v = differentiable ? tape_->leaf(std::move(copy), true)
                         : tape_->constant(std::move(copy));
  bound_.emplace(name, v);
  return v;
}

std::vector<std::pair<std::string, Var>> ParamBinding::bound_trainable() const {
  std::vector<std::pair<std::string, Var>> out;
  for (const auto& [name, var] : bound_) {
    if (var.requires_grad()) out.emplace_back(name, var);
  }
  return out;
}

std::string mlp_weight_name(const std::string& prefix, int layer) {
  return prefix + "/W" + std::to_string(layer);
}
std::string mlp_bias_name(const std::string& prefix, int layer) {
  return prefix + "/b" + std::to_string(layer);
}

namespace {

Var apply_activation(Var h, Activation act) {
  switch (act) {
    case Activation::kSoftplusSharp:
      return softplus(h, 100.0);
    case Activation::kRelu:
      return relu(h);
  }
  throw UsageError("unknown activation");
}

}  // namespace

Var mlp_forward(const MlpSpec& spec, ParamBinding& params,
                const std::string& prefix, Var x) {
  spec.validate();
  if (x.cols() != spec.widths.front()) {
    throw UsageError("mlp_forward: input width mismatch for " + prefix);
  }
  Var x0 = x;
  Var h = x;
  for (int l = 1; l <= spec.num_layers(); ++l) {
    const bool skip = std::find(spec.skip_layers.begin(), spec.skip_layers.end(),
                                l) != spec.skip_layers.end();
    if (skip) h = concat_cols(h, x0);
    Var W = params(mlp_weight_name(prefix, l));
    Var b = params(mlp_bias_name(prefix, l));
    Var z = (l == 1 && spec.first_layer_serial) ? matmul_serial(h, W)
                                                : matmul(h, W);
    h = add(z, b);
    if (l < spec.num_layers()) h = apply_activation(h, spec.activation);
  }
  return h;
}

void backward_into_store(Var loss, ParamBinding& params) {
  const auto bound = params.bound_trainable();
  if (bound.empty()) return;
  std::vector<Var> wrt;
  wrt.reserve(bound.size());
  for (const auto& [name, var] : bound) wrt.push_back(var);
  const std::vector<Var> grads = grad(loss, wrt, /*create_graph=*/false);
  for (size_t i = 0; i < bound.size(); ++i) {
    Tensor& buf = params.store().grad(bound[i].first);
    const Tensor& g = grads[i].val();
    if (!buf.same_shape(g)) {
      throw UsageError("gradient shape mismatch for " + bound[i].first);
    }
    for (int64_t k = 0; k < g.size(); ++k) buf.data[k] += g.data[k];
  }
}

namespace {

Tensor random_uniform(int64_t rows, int64_t cols, double bound, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

void init_mlp_fan_in(ParameterStore& store, const std::string& prefix,
                     const MlpSpec& spec, Rng rng) {
  spec.validate();
  for (int l = 1; l <= spec.num_layers(); ++l) {
    const int in = spec.layer_in_dim(l);
    const int out = spec.widths[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Rng wr = rng.fork("W" + std::to_string(l));
    Rng br = rng.fork("b" + std::to_string(l));
    store.create(mlp_weight_name(prefix, l), random_uniform(in, out, bound, wr));
    store.create(mlp_bias_name(prefix, l), random_uniform(1, out, bound, br));
  }
}

void init_mlp_zero_head(ParameterStore& store, const std::string& prefix,
                        const MlpSpec& spec, Rng rng) {
  init_mlp_fan_in(store, prefix, spec, rng);
  const int last = spec.num_layers();
  Tensor& W = store.value(mlp_weight_name(prefix, last));
  Tensor& b = store.value(mlp_bias_name(prefix, last));
  std::fill(W.data.begin(), W.data.end(), 0.0);
  std::fill(b.data.begin(), b.data.end(), 0.0);
}

void init_mlp_geometric(ParameterStore& store, const std::string& prefix,
                        const MlpSpec& spec, const GeometricInitOptions& opt,
                        Rng rng) {
  spec.validate();
  const int L = spec.num_layers();
  for (int l = 1; l <= L; ++l) {
    const int in = spec.layer_in_dim(l);
    const int out = spec.widths[l];
    Tensor W(in, out);
    Tensor b(1, out);
    Rng wr = rng.fork("W" + std::to_string(l));
    if (l == L) {
      // First output channel approximates ||x|| - radius at init (the
      // constant-column trick for sharp-softplus networks); remaining
      // channels are ordinary feature outputs.
      const double w0 = std::sqrt(M_PI / static_cast<double>(in));
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      for (int64_t i = 0; i < in; ++i) {
        W.at(i, 0) = w0;
        for (int64_t j = 1; j < out; ++j) W.at(i, j) = wr.uniform(-bound, bound);
      }
      b.at(0, 0) = -opt.sphere_radius;
    } else {
      const double std = std::sqrt(2.0 / static_cast<double>(out));
      for (double& v : W.data) v = wr.normal() * std;
      if (l == 1) {
        // Zero the frequency-band columns so the network starts as a
        // function of the raw coordinates only.
        for (int64_t i = opt.raw_dims; i < in; ++i) {
          for (int64_t j = 0; j < out; ++j) W.at(i, j) = 0.0;
        }
      }
      const bool skip = std::find(spec.skip_layers.begin(),
                                  spec.skip_layers.end(), l) !=
                        spec.skip_layers.end();
      if (skip) {
        // The re-fed raw input block starts silent.
        for (int64_t i = spec.widths[l - 1]; i < in; ++i) {
          for (int64_t j = 0; j < out; ++j) W.at(i, j) = 0.0;
        }
      }
    }
    store.create(mlp_weight_name(prefix, l), std::move(W));
    store.create(mlp_bias_name(prefix, l), std::move(b));
  }
}

}  // namespace headsdf
