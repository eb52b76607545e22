#include "core/tape.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <string>

namespace headsdf {

const Tensor& Var::val() const { return tape->node_at(id).value; }
bool Var::requires_grad() const { return tape->node_at(id).requires_grad; }

double Var::scalar_value() const {
  const Tensor& t = val();
  if (t.size() != 1) throw UsageError("scalar_value: node is not [1,1]");
  return t.data[0];
}

Var Tape::push(Node&& n) {
  if (!grad_enabled) n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor v, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(v);
  return push(std::move(n));
}

Var Tape::constant(Tensor v) {
  Node n;
  n.op = Op::kConst;
  n.requires_grad = false;
  n.value = std::move(v);
  return push(std::move(n));
}

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("op on invalid Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw UsageError("op on invalid Var");
  if (a.tape != b.tape) throw UsageError("operands live on different tapes");
  return *a.tape;
}

// Value of t at (i,j) under broadcasting (size-1 dims repeat).
inline double bc_at(const Tensor& t, int64_t i, int64_t j) {
  return t.data[(t.rows() == 1 ? 0 : i) * t.cols() + (t.cols() == 1 ? 0 : j)];
}

template <class F>
Var binary_ew(Op op, Var a, Var b, F f, const char* name) {
  Tape& T = tape_of(a, b);
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  auto dim = [&](int64_t x, int64_t y) -> int64_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw UsageError(std::string(name) + ": incompatible shapes");
  };
  const int64_t r = dim(ta.rows(), tb.rows());
  const int64_t c = dim(ta.cols(), tb.cols());
  Tensor out(r, c);
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      out.at(i, j) = f(bc_at(ta, i, j), bc_at(tb, i, j));
    }
  }
  Node n;
  n.op = op;
  n.in = {a.id, b.id};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

template <class F>
Var unary_ew(Op op, Var a, F f, double aux = 0.0) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  Tensor out(ta.rows(), ta.cols());
  for (int64_t k = 0; k < ta.size(); ++k) out.data[k] = f(ta.data[k]);
  Node n;
  n.op = op;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  n.aux = aux;
  return T.push(std::move(n));
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double stable_softplus(double x, double k) {
  const double u = k * x;
  if (u > 30.0) return x;
  if (u < -30.0) return std::exp(u) / k;
  return std::log1p(std::exp(u)) / k;
}

}  // namespace

Var add(Var a, Var b) {
  return binary_ew(Op::kAdd, a, b, [](double x, double y) { return x + y; }, "add");
}
Var sub(Var a, Var b) {
  return binary_ew(Op::kSub, a, b, [](double x, double y) { return x - y; }, "sub");
}
Var mul(Var a, Var b) {
  return binary_ew(Op::kMul, a, b, [](double x, double y) { return x * y; }, "mul");
}
Var div(Var a, Var b) {
  return binary_ew(Op::kDiv, a, b, [](double x, double y) { return x / y; }, "div");
}

Var neg(Var a) {
  return unary_ew(Op::kNeg, a, [](double x) { return -x; });
}

Var matmul(Var a, Var b) {
  Tape& T = tape_of(a, b);
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.cols() != B.rows()) throw UsageError("matmul: inner dimensions disagree");
  Tensor out(A.rows(), B.cols());
  if (A.rows() > 0 && B.cols() > 0 && A.cols() > 0) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                static_cast<int>(A.rows()), static_cast<int>(B.cols()),
                static_cast<int>(A.cols()), 1.0, A.data.data(),
                static_cast<int>(A.cols()), B.data.data(),
                static_cast<int>(B.cols()), 0.0, out.data.data(),
                static_cast<int>(out.cols()));
  }
  Node n;
  n.op = Op::kMatMul;
  n.in = {a.id, b.id};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var matmul_serial(Var a, Var b) {
  Tape& T = tape_of(a, b);
  const Tensor& A = a.val();
  const Tensor& B = b.val();
  if (A.cols() != B.rows()) {
    throw UsageError("matmul_serial: inner dimensions disagree");
  }
  Tensor out(A.rows(), B.cols());
  const int64_t N = A.rows(), K = A.cols(), M = B.cols();
  for (int64_t i = 0; i < N; ++i) {
    double* c = &out.data[i * M];
    for (int64_t k = 0; k < K; ++k) {
      const double av = A.data[i * K + k];
      const double* brow = &B.data[k * M];
      for (int64_t j = 0; j < M; ++j) c[j] += av * brow[j];
    }
  }
  Node n;
  n.op = Op::kMatMulSerial;
  n.in = {a.id, b.id};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var transpose(Var a) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  Tensor out(ta.cols(), ta.rows());
  for (int64_t i = 0; i < ta.rows(); ++i) {
    for (int64_t j = 0; j < ta.cols(); ++j) out.at(j, i) = ta.at(i, j);
  }
  Node n;
  n.op = Op::kTranspose;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var concat_cols(Var a, Var b) {
  Tape& T = tape_of(a, b);
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (ta.rows() != tb.rows()) throw UsageError("concat_cols: row counts disagree");
  Tensor out(ta.rows(), ta.cols() + tb.cols());
  for (int64_t i = 0; i < ta.rows(); ++i) {
    std::copy_n(&ta.data[i * ta.cols()], ta.cols(), &out.data[i * out.cols()]);
    std::copy_n(&tb.data[i * tb.cols()], tb.cols(),
                &out.data[i * out.cols() + ta.cols()]);
  }
  Node n;
  n.op = Op::kConcatCols;
  n.in = {a.id, b.id};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no operands");
  Var acc = parts[0];
  for (size_t k = 1; k < parts.size(); ++k) acc = concat_cols(acc, parts[k]);
  return acc;
}

Var slice_cols(Var a, int64_t begin, int64_t end) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  if (begin < 0 || end > ta.cols() || begin >= end) {
    throw UsageError("slice_cols: bad range");
  }
  Tensor out(ta.rows(), end - begin);
  for (int64_t i = 0; i < ta.rows(); ++i) {
    std::copy_n(&ta.data[i * ta.cols() + begin], end - begin,
                &out.data[i * out.cols()]);
  }
  Node n;
  n.op = Op::kSliceCols;
  n.in = {a.id, -1};
  n.a0 = begin;
  n.a1 = end;
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var reshape(Var a, int64_t rows, int64_t cols) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  if (rows * cols != ta.size()) throw UsageError("reshape: size mismatch");
  Tensor out(rows, cols);
  out.data = ta.data;
  Node n;
  n.op = Op::kReshape;
  n.in = {a.id, -1};
  n.a0 = rows;
  n.a1 = cols;
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var sum_all(Var a) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  double s = 0.0;
  for (double v : ta.data) s += v;
  Node n;
  n.op = Op::kSumAll;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = Tensor::scalar(s);
  return T.push(std::move(n));
}

Var sum_rows(Var a) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  Tensor out(ta.rows(), 1);
  for (int64_t i = 0; i < ta.rows(); ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < ta.cols(); ++j) s += ta.at(i, j);
    out.at(i, 0) = s;
  }
  Node n;
  n.op = Op::kSumRows;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var sum_cols(Var a) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  Tensor out(1, ta.cols());
  for (int64_t i = 0; i < ta.rows(); ++i) {
    for (int64_t j = 0; j < ta.cols(); ++j) out.at(0, j) += ta.at(i, j);
  }
  Node n;
  n.op = Op::kSumCols;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var broadcast_rows(Var a, int64_t nrows) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  if (ta.rows() != 1) throw UsageError("broadcast_rows: operand must be [1,M]");
  Tensor out(nrows, ta.cols());
  for (int64_t i = 0; i < nrows; ++i) {
    std::copy_n(ta.data.data(), ta.cols(), &out.data[i * ta.cols()]);
  }
  Node n;
  n.op = Op::kBroadcastRows;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var exp(Var a) {
  return unary_ew(Op::kExp, a, [](double x) { return std::exp(x); });
}
Var log(Var a) {
  return unary_ew(Op::kLog, a, [](double x) { return std::log(x); });
}
Var sqrt(Var a) {
  return unary_ew(Op::kSqrt, a, [](double x) { return std::sqrt(x); });
}
Var abs(Var a) {
  return unary_ew(Op::kAbs, a, [](double x) { return std::abs(x); });
}
Var sin(Var a) {
  return unary_ew(Op::kSin, a, [](double x) { return std::sin(x); });
}
Var cos(Var a) {
  return unary_ew(Op::kCos, a, [](double x) { return std::cos(x); });
}
Var sigmoid(Var a) {
  return unary_ew(Op::kSigmoid, a, stable_sigmoid);
}
Var softplus(Var a, double sharpness) {
  return unary_ew(
      Op::kSoftplus, a,
      [sharpness](double x) { return stable_softplus(x, sharpness); },
      sharpness);
}
Var relu(Var a) {
  return unary_ew(Op::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Var cumsum_exclusive(Var a) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  Tensor out(ta.rows(), ta.cols());
  for (int64_t i = 0; i < ta.rows(); ++i) {
    double run = 0.0;
    for (int64_t j = 0; j < ta.cols(); ++j) {
      out.at(i, j) = run;
      run += ta.at(i, j);
    }
  }
  Node n;
  n.op = Op::kCumsumExcl;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var rev_cumsum_exclusive(Var a) {
  Tape& T = tape_of(a);
  const Tensor& ta = a.val();
  Tensor out(ta.rows(), ta.cols());
  for (int64_t i = 0; i < ta.rows(); ++i) {
    double run = 0.0;
    for (int64_t j = ta.cols() - 1; j >= 0; --j) {
      out.at(i, j) = run;
      run += ta.at(i, j);
    }
  }
  Node n;
  n.op = Op::kRevCumsumExcl;
  n.in = {a.id, -1};
  n.requires_grad = a.requires_grad();
  n.value = std::move(out);
  return T.push(std::move(n));
}

Var detach(Var a) {
  Tape& T = tape_of(a);
  Tensor copy = a.val();
  Node n;
  n.op = Op::kDetach;
  n.in = {a.id, -1};
  n.requires_grad = false;
  n.value = std::move(copy);
  return T.push(std::move(n));
}

Var scalar(Tape& t, double v) { return t.constant(Tensor::scalar(v)); }
Var scale(Var a, double s) { return mul(a, scalar(*a.tape, s)); }
Var add_scalar(Var a, double s) { return add(a, scalar(*a.tape, s)); }
Var square(Var a) { return mul(a, a); }

Var mean_all(Var a) {
  const int64_t n = a.val().size();
  if (n == 0) throw UsageError("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Var smooth_row_norm(Var a, double eps) {
  Var q = add_scalar(sum_rows(square(a)), eps * eps);
  return add_scalar(sqrt(q), -eps);
}

namespace {

// Reduce an output-shaped gradient back to an operand's (possibly broadcast)
// shape by summing over the repeated dimensions.
Var reduce_to(Var g, int64_t rows, int64_t cols) {
  if (g.rows() != rows) g = sum_cols(g);
  if (g.cols() != cols) g = sum_rows(g);
  return g;
}

Tensor elementwise_map(const Tensor& t, double (*f)(double)) {
  Tensor out(t.rows(), t.cols());
  for (int64_t k = 0; k < t.size(); ++k) out.data[k] = f(t.data[k]);
  return out;
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
double step_of(double x) { return x > 0.0 ? 1.0 : 0.0; }

struct GradModeGuard {
  GradModeGuard(Tape& t, bool mode) : tape(t), saved(t.grad_enabled) {
    tape.grad_enabled = mode;
  }
  ~GradModeGuard() { tape.grad_enabled = saved; }
  Tape& tape;
  bool saved;
};

}  // namespace

std::vector<Var> grad(Var output, std::span<const Var> wrt, bool create_graph) {
  if (!output.valid()) throw UsageError("grad: invalid output");
  Tape& T = *output.tape;
  if (output.val().size() != 1) throw UsageError("grad: output must be scalar");
  for (Var w : wrt) {
    if (!w.valid() || w.tape != &T) {
      throw UsageError("grad: wrt variable not on the output's tape");
    }
  }
  const int32_t root = output.id;

  // Mark nodes that both influence the output and carry gradient.
  std::vector<uint8_t> needed(root + 1, 0);
  if (T.node_at(root).requires_grad) {
    std::vector<int32_t> stack{root};
    needed[root] = 1;
    while (!stack.empty()) {
      const int32_t i = stack.back();
      stack.pop_back();
      for (int32_t j : T.node_at(i).in) {
        if (j >= 0 && !needed[j] && T.node_at(j).requires_grad) {
          needed[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }

  std::vector<Var> adj(root + 1);
  GradModeGuard mode(T, create_graph);

  auto accumulate = [&](int32_t id, Var g) {
    if (id < 0 || !needed[id]) return;
    adj[id] = adj[id].valid() ? add(adj[id], g) : g;
  };

  if (needed[root]) adj[root] = T.constant(Tensor::scalar(1.0));

  for (int32_t i = root; i >= 0; --i) {
    if (!adj[i].valid()) continue;
    // Copy node metadata up front: emitting VJP ops below reallocates the
    // node storage, so holding a Node reference across emission is unsafe.
    const Op op = T.node_at(i).op;
    const auto in = T.node_at(i).in;
    const double aux = T.node_at(i).aux;
    const Var g = adj[i];
    const Var self{&T, i};
    const Var va{&T, in[0]};
    const Var vb{&T, in[1]};

    switch (op) {
      case Op::kLeaf:
      case Op::kConst:
      case Op::kDetach:
        break;
      case Op::kAdd:
        accumulate(in[0], reduce_to(g, va.rows(), va.cols()));
        accumulate(in[1], reduce_to(g, vb.rows(), vb.cols()));
        break;
      case Op::kSub:
        accumulate(in[0], reduce_to(g, va.rows(), va.cols()));
        accumulate(in[1], reduce_to(neg(g), vb.rows(), vb.cols()));
        break;
      case Op::kMul:
        accumulate(in[0], reduce_to(mul(g, vb), va.rows(), va.cols()));
        accumulate(in[1], reduce_to(mul(g, va), vb.rows(), vb.cols()));
        break;
      case Op::kDiv:
        accumulate(in[0], reduce_to(div(g, vb), va.rows(), va.cols()));
        accumulate(in[1],
                   reduce_to(neg(div(mul(g, self), vb)), vb.rows(), vb.cols()));
        break;
      case Op::kNeg:
        accumulate(in[0], neg(g));
        break;
      case Op::kMatMul:
      case Op::kMatMulSerial:
        accumulate(in[0], matmul(g, transpose(vb)));
        accumulate(in[1], matmul(transpose(va), g));
        break;
      case Op::kTranspose:
        accumulate(in[0], transpose(g));
        break;
      case Op::kConcatCols: {
        const int64_t ca = va.cols();
        accumulate(in[0], slice_cols(g, 0, ca));
        accumulate(in[1], slice_cols(g, ca, ca + vb.cols()));
        break;
      }
      case Op::kSliceCols: {
        const int64_t begin = T.node_at(i).a0;
        const int64_t end = T.node_at(i).a1;
        const int64_t total = va.cols();
        Var padded = g;
        if (begin > 0) {
          padded = concat_cols(T.constant(Tensor::zeros(g.rows(), begin)), padded);
        }
        if (end < total) {
          padded =
              concat_cols(padded, T.constant(Tensor::zeros(g.rows(), total - end)));
        }
        accumulate(in[0], padded);
        break;
      }
      case Op::kReshape:
        accumulate(in[0], reshape(g, va.rows(), va.cols()));
        break;
      case Op::kSumAll:
      case Op::kSumRows:
      case Op::kSumCols:
        accumulate(in[0],
                   mul(T.constant(Tensor::full(va.rows(), va.cols(), 1.0)), g));
        break;
      case Op::kBroadcastRows:
        accumulate(in[0], sum_cols(g));
        break;
      case Op::kExp:
        accumulate(in[0], mul(g, self));
        break;
      case Op::kLog:
        accumulate(in[0], div(g, va));
        break;
      case Op::kSqrt:
        accumulate(in[0], div(scale(g, 0.5), self));
        break;
      case Op::kAbs:
        accumulate(in[0], mul(g, T.constant(elementwise_map(va.val(), sign_of))));
        break;
      case Op::kSin:
        accumulate(in[0], mul(g, cos(va)));
        break;
      case Op::kCos:
        accumulate(in[0], neg(mul(g, sin(va))));
        break;
      case Op::kSigmoid:
        accumulate(in[0], mul(g, mul(self, add_scalar(neg(self), 1.0))));
        break;
      case Op::kSoftplus:
        accumulate(in[0], mul(g, sigmoid(scale(va, aux))));
        break;
      case Op::kRelu:
        accumulate(in[0], mul(g, T.constant(elementwise_map(va.val(), step_of))));
        break;
      case Op::kCumsumExcl:
        accumulate(in[0], rev_cumsum_exclusive(g));
        break;
      case Op::kRevCumsumExcl:
        accumulate(in[0], cumsum_exclusive(g));
        break;
    }
  }

  std::vector<Var> results;
  results.reserve(wrt.size());
  for (Var w : wrt) {
    if (w.id <= root && adj[w.id].valid()) {
      results.push_back(adj[w.id]);
    } else {
      results.push_back(T.constant(Tensor::zeros(w.rows(), w.cols())));
    }
  }
  return results;
}

Var spatial_gradient(Var y, Var x) {
  if (y.cols() != 1) throw UsageError("spatial_gradient: y must be [N,1]");
  if (y.rows() != x.rows()) {
    throw UsageError("spatial_gradient: row counts of y and x disagree");
  }
  // Rows are independent (all field networks act row-wise), so the gradient
  // of sum(y) w.r.t. x recovers every per-row spatial gradient in one pass.
  const std::array<Var, 1> wrt{x};
  return grad(sum_all(y), wrt, /*create_graph=*/true)[0];
}

}  // namespace headsdf
