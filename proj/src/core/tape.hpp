#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "core/tensor.hpp"

namespace headsdf {

// Op vocabulary for the reverse-mode tape. Every backward rule is itself
// expressed in these ops, so gradients of gradients come out exact (needed
// because surface normals — spatial gradients — feed the color network and
// therefore sit on the training path).
enum class Op : uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kMatMul,
  kMatMulSerial,
  kTranspose,
  kConcatCols,   // binary; wider concats are chained
  kSliceCols,    // [a0, a1)
  kReshape,
  kSumAll,        // -> [1,1]
  kSumRows,       // [N,M] -> [N,1]
  kSumCols,       // [N,M] -> [1,M]
  kBroadcastRows, // [1,M] -> [N,M]
  kExp,
  kLog,
  kSqrt,
  kAbs,
  kSin,
  kCos,
  kSigmoid,
  kSoftplus,      // log(1+exp(k*x))/k, aux = k
  kRelu,
  kCumsumExcl,    // along rows: y[i,j] = sum_{j'<j} x[i,j']
  kRevCumsumExcl, // y[i,j] = sum_{j'>j} x[i,j']
  kDetach,
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  bool requires_grad() const;
  int64_t rows() const { return val().rows(); }
  int64_t cols() const { return val().cols(); }
  double scalar_value() const;  // requires a [1,1] node
};

struct Node {
  Op op = Op::kConst;
  bool requires_grad = false;
  std::array<int32_t, 2> in{{-1, -1}};
  Tensor value;
  double aux = 0.0;        // softplus sharpness
  int64_t a0 = 0, a1 = 0;  // slice bounds / reshape target
};

// Eagerly-evaluated gradient tape. One tape per optimization step (or per
// evaluation batch); it owns every intermediate tensor, so dropping the tape
// frees the step.
class Tape {
 public:
  Var leaf(Tensor v, bool requires_grad);
  Var constant(Tensor v);

  size_t size() const { return nodes_.size(); }
  const Node& node_at(int32_t id) const { return nodes_[id]; }

  // When false, newly created nodes never require grad. grad() flips this off
  // while create_graph=false so backward passes don't grow differentiable
  // structure; RAII via NoGradGuard for inference-style evaluation.
  bool grad_enabled = true;

  Var push(Node&& n);

 private:
  std::vector<Node> nodes_;
};

struct NoGradGuard {
  explicit NoGradGuard(Tape& t) : tape(t), saved(t.grad_enabled) {
    tape.grad_enabled = false;
  }
  ~NoGradGuard() { tape.grad_enabled = saved; }
  Tape& tape;
  bool saved;
};

// ---- op library ------------------------------------------------------------
// Binary elementwise ops broadcast: each operand dimension must equal the
// output dimension or be 1 (so [N,M] with [1,M], [N,1], [1,1], and outer
// products like [N,1]*[1,M] all work).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var matmul(Var a, Var b);
// Same contract as matmul but with a strictly serial accumulation order over
// the inner dimension. Used where a network's input layout may later gain
// columns with zero weights: serial accumulation makes those columns exact
// no-ops, so the extended layer reproduces the original bitwise (BLAS kernels
// re-block the inner dimension and lose that property).
Var matmul_serial(Var a, Var b);
Var transpose(Var a);
Var concat_cols(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, int64_t begin, int64_t end);
Var reshape(Var a, int64_t rows, int64_t cols);
Var sum_all(Var a);
Var sum_rows(Var a);
Var sum_cols(Var a);
Var broadcast_rows(Var a, int64_t n);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var sin(Var a);
Var cos(Var a);
Var sigmoid(Var a);
Var softplus(Var a, double sharpness);
Var relu(Var a);
Var cumsum_exclusive(Var a);
Var rev_cumsum_exclusive(Var a);
Var detach(Var a);

// Conveniences built from the ops above.
Var scalar(Tape& t, double v);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var square(Var a);
// mean over all entries -> [1,1]
Var mean_all(Var a);
// sqrt(sum_j x[i,j]^2 + eps^2) - eps per row -> [N,1]; exact norm as eps -> 0
// with well-defined gradient at x = 0.
Var smooth_row_norm(Var a, double eps);

// Reverse-mode gradients of scalar `output` w.r.t. each of `wrt`, in order.
// Leaves that do not influence the output get zeros. With create_graph=true
// the returned gradients are recorded on the tape and can be differentiated
// again; with false the backward pass is grad-opaque.
std::vector<Var> grad(Var output, std::span<const Var> wrt, bool create_graph);

// Row-wise spatial gradient: y must be [N,1], x a [N,3] (or [N,D]) node whose
// rows independently produce y's rows (true for every field network here).
// Returns [N,D], differentiable (create_graph=true underneath).
Var spatial_gradient(Var y, Var x);

}  // namespace headsdf
