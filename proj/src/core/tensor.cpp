#include "core/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace headsdf {

Tensor Tensor::full(int64_t rows, int64_t cols, double v) {
  Tensor t(rows, cols);
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor Tensor::from(int64_t rows, int64_t cols, std::vector<double> values) {
  if (static_cast<int64_t>(values.size()) != rows * cols) {
    throw UsageError("Tensor::from: value count does not match shape");
  }
  Tensor t(rows, cols);
  t.data = std::move(values);
  return t;
}

void Tensor::round_to_f32() {
  for (double& v : data) v = static_cast<double>(static_cast<float>(v));
}

void Tensor::check_finite(const std::string& context) const {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + context);
    }
  }
}

}  // namespace headsdf
