#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace headsdf {

// Frequency encoding gamma(x) = [x, sin(2^0 pi x), cos(2^0 pi x), ...,
// sin(2^{L-1} pi x), cos(2^{L-1} pi x)], applied per input column. Extending L
// appends columns, so a widened encoding is a superset of the narrow one.
struct PositionalEncodingSpec {
  int num_frequencies = 6;
  bool include_input = true;

  int out_dim(int in_dim) const {
    return in_dim * (2 * num_frequencies + (include_input ? 1 : 0));
  }
};

Var positional_encode(Var x, const PositionalEncodingSpec& spec);

enum class Activation {
  kSoftplusSharp,  // log(1+exp(100x))/100; smooth relu for SDF networks
  kRelu,
};

// Fully-connected network description. widths = {in, hidden..., out}; affine
// layers are numbered 1..num_layers(). A skip layer's input is the previous
// activation concatenated with the raw network input. The final layer has no
// activation; heads apply their own.
struct MlpSpec {
  std::vector<int> widths;
  std::vector<int> skip_layers;
  Activation activation = Activation::kSoftplusSharp;
  // Serial first-layer matmul: required for networks whose input layout can
  // gain zero-initialized columns without changing existing outputs.
  bool first_layer_serial = false;

  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;
  int layer_in_dim(int layer) const;  // accounts for skip concatenation
};

// Named parameter set. std::map keeps iteration order deterministic, which
// the optimizer and checkpoint writer both rely on.
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool trainable = true;
  };

  Tensor& create(const std::string& name, Tensor init, bool trainable = true);
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  bool has(const std::string& name) const;
  void remove(const std::string& name);
  void set_trainable(const std::string& name, bool trainable);
  bool trainable(const std::string& name) const;
  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  void zero_grads();
  // Snap all values (not grads) to f32-representable doubles.
  void round_values_to_f32();

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Entry> entries_;
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
};

// Per-tape view of a ParameterStore. Parameters are bound lazily: trainable
// ones as differentiable leaves, frozen ones (or everything, when frozen_all
// is set for inference) as constants. After the backward pass the trainer
// folds leaf gradients back into the store via accumulate_grads.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, ParameterStore& store, bool frozen_all = false)
      : tape_(&tape), store_(&store), frozen_all_(frozen_all) {}

  Var operator()(const std::string& name);

  // Bound-and-trainable (name, var) pairs in name order.
  std::vector<std::pair<std::string, Var>> bound_trainable() const;

  Tape& tape() { return *tape_; }
  ParameterStore& store() { return *store_; }

 private:
  Tape* tape_;
  ParameterStore* store_;
  bool frozen_all_;
  std::map<std::string, Var> bound_;
};

// Runs the network on x ([N, widths.front()]); returns [N, widths.back()].
Var mlp_forward(const MlpSpec& spec, ParamBinding& params,
                const std::string& prefix, Var x);

// Reverse pass from a scalar loss, accumulated (+=) into the store's gradient
// buffers for every trainable parameter bound through `params`. Accumulation
// lets a step be split into chunks whose gradients sum exactly.
void backward_into_store(Var loss, ParamBinding& params);

// Parameter names used by mlp_forward: prefix + "/W<l>" ([in,out], y = x W + b)
// and prefix + "/b<l>" ([1,out]).
std::string mlp_weight_name(const std::string& prefix, int layer);
std::string mlp_bias_name(const std::string& prefix, int layer);

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for all weights and biases.
void init_mlp_fan_in(ParameterStore& store, const std::string& prefix,
                     const MlpSpec& spec, Rng rng);

// Fan-in init with the final layer zeroed; the network starts as the constant
// zero function with nonzero internal features, which lets residual heads
// (deformation, displacement) begin as exact no-ops.
void init_mlp_zero_head(ParameterStore& store, const std::string& prefix,
                        const MlpSpec& spec, Rng rng);

// SDF-style initialization: the first output channel starts out close to
// the signed distance of a sphere with the given radius. Input columns beyond
// the first raw_dims (the frequency bands) start at zero, as do the re-fed
// input columns of skip layers.
struct GeometricInitOptions {
  int raw_dims = 3;
  double sphere_radius = 0.5;
};
void init_mlp_geometric(ParameterStore& store, const std::string& prefix,
                        const MlpSpec& spec, const GeometricInitOptions& opt,
                        Rng rng);

}  // namespace headsdf
