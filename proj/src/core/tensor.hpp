#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace headsdf {

// Error taxonomy shared across the library. The C API maps these onto status
// codes; internally we just throw.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. All differentiable state is 2-D:
// vectors are [n,1] or [1,n], scalars [1,1]. Training math runs in f64;
// 32-bit only appears as the checkpoint storage format (see checkpoint.cpp).
struct Tensor {
  std::vector<int64_t> shape;  // always {rows, cols}
  std::vector<double> data;    // row-major, size rows*cols
  // Optional gradient accumulator, allocated only for trainable parameters.
  std::shared_ptr<Tensor> grad;

  Tensor() : shape{0, 0} {}
  Tensor(int64_t rows, int64_t cols)
      : shape{rows, cols}, data(static_cast<size_t>(rows * cols), 0.0) {}

  int64_t rows() const { return shape[0]; }
  int64_t cols() const { return shape[1]; }
  int64_t size() const { return rows() * cols(); }

  double& at(int64_t i, int64_t j) { return data[i * cols() + j]; }
  double at(int64_t i, int64_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const {
    return rows() == o.rows() && cols() == o.cols();
  }

  static Tensor zeros(int64_t rows, int64_t cols) { return Tensor(rows, cols); }
  static Tensor full(int64_t rows, int64_t cols, double v);
  static Tensor from(int64_t rows, int64_t cols, std::vector<double> values);
  static Tensor scalar(double v) { return full(1, 1, v); }

  // Snap every entry to the nearest binary32 value. Used when persisting so a
  // saved-then-reloaded model continues bit-identically to one that never
  // went through a save.
  void round_to_f32();

  // Throws NumericError if any entry is NaN or infinite.
  void check_finite(const std::string& context) const;
};

}  // namespace headsdf
