#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "core/nn.hpp"
#include "core/tensor.hpp"

namespace headsdf {

// Adam with bias correction. Moments are keyed by parameter name so the
// state survives checkpointing and parameters added later (fresh codes)
// start with zero moments.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step_count = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// One update over every trainable parameter in the store, consuming the
// gradients accumulated there. Iteration order is the store's name order.
void adam_step(ParameterStore& store, AdamState& state, double lr);

// Exponential decay from lr0 to lr0*final_factor across `total` steps.
double lr_schedule(double lr0, double final_factor, int64_t step, int64_t total);

}  // namespace headsdf
