#include "core/optim.hpp"

#include <cmath>

namespace headsdf {

void adam_step(ParameterStore& store, AdamState& state, double lr) {
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (const std::string& name : store.trainable_names()) {
    Tensor& p = store.value(name);
    const Tensor& g = store.grad(name);
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.rows(), p.cols()))
                    .first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.rows(), p.cols()))
                    .first->second;
    if (!m.same_shape(p) || !v.same_shape(p)) {
      throw UsageError("adam_step: stale moment shape for " + name);
    }
    for (int64_t k = 0; k < p.size(); ++k) {
      const double gk = g.data[k];
      m.data[k] = state.beta1 * m.data[k] + (1.0 - state.beta1) * gk;
      v.data[k] = state.beta2 * v.data[k] + (1.0 - state.beta2) * gk * gk;
      const double mhat = m.data[k] / bc1;
      const double vhat = v.data[k] / bc2;
      p.data[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double lr_schedule(double lr0, double final_factor, int64_t step,
                   int64_t total) {
  if (total <= 0) return lr0;
  if (step < 0) step = 0;
  if (step > total) step = total;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr0 * std::pow(final_factor, frac);
}

}  // namespace headsdf
