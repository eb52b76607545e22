#pragma once

#include <string>
#include <vector>

#include "core/nn.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"
#include "support/fd_check.hpp"

namespace headsdf::testing {

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  ScalarBuilder build;
  double h = 1e-5;
  double tol = 1e-5;
  bool second_order = false;
};

// Random projection turning a tensor output into a scalar while exercising
// the whole Jacobian. Takes the rng by value so repeated evaluations of one
// case always use the same projection.
inline Var project_to_scalar(Var y, Rng r) {
  Tensor p(y.rows(), y.cols());
  for (double& v : p.data) v = r.uniform(-1.0, 1.0);
  return sum_all(mul(y, y.tape->constant(std::move(p))));
}

// One registry shared by the unit tests and the verification gate: every op
// and every load-bearing composition, checked against central differences.
inline std::vector<GradCase> make_grad_cases() {
  std::vector<GradCase> cases;
  Rng rng(20240817);

  auto add_case = [&](std::string name, std::vector<Tensor> inputs,
                      ScalarBuilder build, double h = 1e-5, double tol = 1e-5,
                      bool second = false) {
    cases.push_back({std::move(name), std::move(inputs), std::move(build), h,
                     tol, second});
  };

  // --- binary elementwise ops across broadcast layouts ---
  struct Shape2 {
    int64_t r, c;
  };
  const std::vector<std::pair<Shape2, Shape2>> layouts = {
      {{3, 4}, {3, 4}}, {{3, 4}, {1, 4}}, {{3, 4}, {3, 1}},
      {{3, 4}, {1, 1}}, {{3, 1}, {1, 4}},
  };
  struct BinOp {
    const char* name;
    Var (*fn)(Var, Var);
    bool positive_rhs;
  };
  const std::vector<BinOp> binops = {
      {"add", &add, false},
      {"sub", &sub, false},
      {"mul", &mul, false},
      {"div", &div, true},
  };
  for (const BinOp& op : binops) {
    int li = 0;
    for (const auto& [sa, sb] : layouts) {
      Rng cr = rng.fork(std::string(op.name) + std::to_string(li));
      Tensor a = random_tensor(sa.r, sa.c, cr);
      Tensor b = op.positive_rhs ? random_tensor(sb.r, sb.c, cr, 0.5, 2.0)
                                 : random_tensor(sb.r, sb.c, cr);
      Rng pr = cr.fork("proj");
      auto fn = op.fn;
      add_case(std::string(op.name) + "/layout" + std::to_string(li),
               {std::move(a), std::move(b)},
               [fn, pr](Tape&, const std::vector<Var>& in) {
                 return project_to_scalar(fn(in[0], in[1]), pr);
               });
      ++li;
    }
  }

  // --- unary elementwise ops ---
  struct UnOp {
    const char* name;
    std::function<Var(Var)> fn;
    double lo, hi;
    double h;
  };
  const std::vector<UnOp> unops = {
      {"neg", [](Var a) { return neg(a); }, -1.5, 1.5, 1e-5},
      {"exp", [](Var a) { return exp(a); }, -1.5, 1.5, 1e-5},
      {"log", [](Var a) { return log(a); }, 0.3, 2.5, 1e-5},
      {"sqrt", [](Var a) { return sqrt(a); }, 0.3, 2.5, 1e-5},
      // abs/relu/softplus samples stay away from their kinks: the subgradient
      // convention there is not what a symmetric difference measures.
      {"abs", [](Var a) { return abs(a); }, 0.2, 1.5, 1e-5},
      {"sin", [](Var a) { return sin(a); }, -1.5, 1.5, 1e-5},
      {"cos", [](Var a) { return cos(a); }, -1.5, 1.5, 1e-5},
      {"sigmoid", [](Var a) { return sigmoid(a); }, -3.0, 3.0, 1e-5},
      {"softplus_sharp", [](Var a) { return softplus(a, 100.0); }, 0.05, 1.5,
       1e-6},
      {"relu", [](Var a) { return relu(a); }, 0.2, 1.5, 1e-5},
  };
  for (const UnOp& op : unops) {
    const std::string name(op.name);
    Rng cr = rng.fork("u_" + name);
    Tensor a = random_tensor(4, 5, cr, op.lo, op.hi);
    if (name == "abs" || name == "relu" || name == "softplus_sharp") {
      for (int64_t k = 0; k < a.size(); k += 2) a.data[k] = -a.data[k];
    }
    Rng pr = cr.fork("proj");
    auto fn = op.fn;
    add_case("unary/" + name, {std::move(a)},
             [fn, pr](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(fn(in[0]), pr);
             },
             op.h);
  }

  // --- structural ops ---
  {
    Rng cr = rng.fork("matmul");
    Rng pr = cr.fork("proj");
    add_case("matmul", {random_tensor(3, 4, cr), random_tensor(4, 5, cr)},
             [pr](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(matmul(in[0], in[1]), pr);
             });
  }
  {
    Rng cr = rng.fork("matmul_serial");
    Rng pr = cr.fork("proj");
    add_case("matmul_serial",
             {random_tensor(3, 7, cr), random_tensor(7, 2, cr)},
             [pr](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(matmul_serial(in[0], in[1]), pr);
             });
  }
  {
    Rng cr = rng.fork("transpose");
    Rng pr = cr.fork("proj");
    add_case("transpose", {random_tensor(3, 5, cr)},
             [pr](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(transpose(in[0]), pr);
             });
  }
  {
    Rng cr = rng.fork("concat");
    Rng pr = cr.fork("proj");
    add_case("concat_cols",
             {random_tensor(3, 2, cr), random_tensor(3, 4, cr),
              random_tensor(3, 1, cr)},
             [pr](Tape&, const std::vector<Var>& in) {
               const std::vector<Var> parts{in[0], in[1], in[2]};
               return project_to_scalar(concat_cols(parts), pr);
             });
  }
  {
    Rng cr = rng.fork("slice");
    Rng pr = cr.fork("proj");
    add_case("slice_cols", {random_tensor(3, 6, cr)},
             [pr](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(slice_cols(in[0], 2, 5), pr);
             });
  }
  {
    Rng cr = rng.fork("reshape");
    Rng pr = cr.fork("proj");
    add_case("reshape", {random_tensor(3, 4, cr)},
             [pr](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(reshape(in[0], 2, 6), pr);
             });
  }
  {
    Rng cr = rng.fork("sums");
    Rng p1 = cr.fork("p1"), p2 = cr.fork("p2"), p3 = cr.fork("p3");
    add_case("sum_all", {random_tensor(3, 4, cr)},
             [](Tape&, const std::vector<Var>& in) { return sum_all(in[0]); });
    add_case("sum_rows", {random_tensor(3, 4, cr)},
             [p1](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(sum_rows(in[0]), p1);
             });
    add_case("sum_cols", {random_tensor(3, 4, cr)},
             [p2](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(sum_cols(in[0]), p2);
             });
    add_case("broadcast_rows", {random_tensor(1, 4, cr)},
             [p3](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(broadcast_rows(in[0], 5), p3);
             });
  }
  {
    Rng cr = rng.fork("cumsum");
    Rng p1 = cr.fork("p1"), p2 = cr.fork("p2");
    add_case("cumsum_exclusive", {random_tensor(3, 6, cr)},
             [p1](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(cumsum_exclusive(in[0]), p1);
             });
    add_case("rev_cumsum_exclusive", {random_tensor(3, 6, cr)},
             [p2](Tape&, const std::vector<Var>& in) {
               return project_to_scalar(rev_cumsum_exclusive(in[0]), p2);
             });
  }
  {
    Rng cr = rng.fork("norm");
    add_case("smooth_row_norm", {random_tensor(4, 3, cr)},
             [](Tape&, const std::vector<Var>& in) {
               return sum_all(smooth_row_norm(in[0], 1e-8));
             });
  }

  // --- load-bearing compositions ---
  {
    // Transmittance/weights chain: positive densities through the exclusive
    // cumulative sum, exponentials, and a weighted color readout.
    Rng cr = rng.fork("compositing");
    Rng pr = cr.fork("proj");
    Tensor raw = random_tensor(2, 8, cr, -1.0, 1.0);
    Tensor us = random_tensor(2, 8, cr, 0.01, 0.2);
    Tensor col = random_tensor(2, 8, cr, 0.0, 1.0);
    add_case("render_weights_chain", {std::move(raw), std::move(col)},
             [us, pr](Tape& T, const std::vector<Var>& in) {
               Var sigma = exp(in[0]);
               Var su = mul(sigma, T.constant(us));
               Var trans = exp(neg(cumsum_exclusive(su)));
               Var alpha = sub(scalar(T, 1.0), exp(neg(su)));
               Var w = mul(trans, alpha);
               Var c = sum_rows(mul(w, sigmoid(in[1])));
               return project_to_scalar(c, pr);
             });
  }
  {
    // Positional encoding into a linear readout.
    Rng cr = rng.fork("pe_mlp");
    Rng pr = cr.fork("proj");
    add_case("encode_linear",
             {random_tensor(5, 3, cr, -1.0, 1.0),
              random_tensor(15, 4, cr, -0.5, 0.5)},
             [pr](Tape&, const std::vector<Var>& in) {
               PositionalEncodingSpec pe;
               pe.num_frequencies = 2;
               Var enc = positional_encode(in[0], pe);  // [5, 15]
               return project_to_scalar(sigmoid(matmul(enc, in[1])), pr);
             });
  }
  {
    // Two affine layers with the sharp softplus, weights and inputs checked.
    Rng cr = rng.fork("mlp_manual");
    Rng pr = cr.fork("proj");
    add_case(
        "mlp_softplus",
        {random_tensor(4, 3, cr), random_tensor(3, 6, cr, -0.6, 0.6),
         random_tensor(1, 6, cr, -0.3, 0.3), random_tensor(6, 5, cr, -0.6, 0.6),
         random_tensor(1, 5, cr, -0.3, 0.3)},
        [pr](Tape&, const std::vector<Var>& in) {
          Var h = softplus(add(matmul(in[0], in[1]), in[2]), 100.0);
          Var y = add(matmul(h, in[3]), in[4]);
          return project_to_scalar(y, pr);
        },
        1e-6);
  }

  // --- second-order: gradients of spatial gradients ---
  {
    // Eikonal-style objective on an analytic field: sum over points of
    // (||grad f|| - 1)^2 for f = sin(x0)*exp(0.3 x1) + x2^2.
    Rng cr = rng.fork("second_analytic");
    add_case(
        "second_order/analytic_field", {random_tensor(5, 3, cr, -1.0, 1.0)},
        [](Tape&, const std::vector<Var>& in) {
          Var x0 = slice_cols(in[0], 0, 1);
          Var x1 = slice_cols(in[0], 1, 2);
          Var x2 = slice_cols(in[0], 2, 3);
          Var f = add(mul(sin(x0), exp(scale(x1, 0.3))), square(x2));
          Var g = spatial_gradient(f, in[0]);
          Var n = smooth_row_norm(g, 1e-8);
          return sum_all(square(add_scalar(n, -1.0)));
        },
        1e-5, 1e-4, true);
  }
  {
    // Same objective through a real network, differentiated w.r.t. the
    // weights: the exact path the surface regularizers take.
    Rng cr = rng.fork("second_mlp");
    Tensor X = random_tensor(4, 3, cr, -0.8, 0.8);
    add_case(
        "second_order/network_weights",
        {random_tensor(3, 8, cr, -0.7, 0.7), random_tensor(1, 8, cr, -0.3, 0.3),
         random_tensor(8, 1, cr, -0.7, 0.7),
         random_tensor(1, 1, cr, -0.3, 0.3)},
        [X](Tape& T, const std::vector<Var>& in) {
          Var x = T.leaf(X, true);
          Var h = softplus(add(matmul(x, in[0]), in[1]), 100.0);
          Var y = add(matmul(h, in[2]), in[3]);
          Var g = spatial_gradient(y, x);
          return sum_all(square(add_scalar(smooth_row_norm(g, 1e-8), -1.0)));
        },
        1e-5, 1e-4, true);
  }
  {
    // Normals feeding a nonlinear consumer (the color-network pattern).
    Rng cr = rng.fork("second_consumer");
    Rng pr = cr.fork("proj");
    add_case(
        "second_order/normal_consumer",
        {random_tensor(4, 3, cr, -1.0, 1.0),
         random_tensor(3, 3, cr, -0.7, 0.7)},
        [pr](Tape&, const std::vector<Var>& in) {
          Var z = matmul(in[0], in[1]);
          Var f = sum_rows(mul(sin(z), z));  // [N,1]
          Var g = spatial_gradient(f, in[0]);
          Var nrm = div(g, add_scalar(smooth_row_norm(g, 1e-8), 1e-3));
          return project_to_scalar(sigmoid(nrm), pr);
        },
        1e-5, 1e-4, true);
  }

  return cases;
}

}  // namespace headsdf::testing
