#include "core/losses.hpp"

#include <cmath>
#include <iostream>

namespace headsdf {

namespace {
// Keeps row norms differentiable at exactly zero rows (fresh models start
// there) while perturbing values far below test tolerances.
constexpr double kNormEps = 1e-12;
}  // namespace

Var spatial_jacobian(Var f, Var x) {
  if (!f.valid() || f.cols() != 3)
    throw UsageError("spatial_jacobian: expected a [N,3] field");
  std::array<Var, 3> rows;
  for (int k = 0; k < 3; ++k)
    rows[k] = spatial_gradient(slice_cols(f, k, k + 1), x);
  return concat_cols(rows);
}

Var color_loss(Var c, Var c_gt, double weight) {
  if (!c.valid() || !c_gt.valid())
    throw UsageError("color_loss: invalid batch");
  if (c.rows() != c_gt.rows() || c.cols() != 3 || c_gt.cols() != 3)
    throw UsageError("color_loss: batches must both be [R,3]");
  if (c.rows() == 0) {
    std::cerr << "color_loss: empty ray batch contributes zero\n";
    return scalar(*c.tape, 0.0);
  }
  return scale(mean_all(sum_rows(abs(sub(c, c_gt)))), weight);
}

Var deformation_loss(Var d, Var jacobian, double w_magnitude,
                     double w_smoothness) {
  if (!d.valid() || d.cols() != 3)
    throw UsageError("deformation_loss: expected offsets of shape [N,3]");
  if (!jacobian.valid() || jacobian.cols() != 9 ||
      jacobian.rows() != d.rows())
    throw UsageError("deformation_loss: expected a [N,9] Jacobian batch");
  Var magnitude = mean_all(smooth_row_norm(d, kNormEps));
  Var smoothness = mean_all(smooth_row_norm(jacobian, kNormEps));
  return add(scale(magnitude, w_magnitude), scale(smoothness, w_smoothness));
}

Var eikonal_loss(Var grad_s, double weight) {
  if (!grad_s.valid() || grad_s.cols() != 3)
    throw UsageError("eikonal_loss: expected gradients of shape [N,3]");
  Var norms = smooth_row_norm(grad_s, kNormEps);
  return scale(mean_all(square(add_scalar(norms, -1.0))), weight);
}

Var displacement_loss(Var delta, Var grad_delta, double w_magnitude,
                      double w_smoothness) {
  if (!delta.valid() || delta.cols() != 1)
    throw UsageError("displacement_loss: expected offsets of shape [N,1]");
  if (!grad_delta.valid() || grad_delta.cols() != 3 ||
      grad_delta.rows() != delta.rows())
    throw UsageError("displacement_loss: expected gradients of shape [N,3]");
  Var magnitude = mean_all(abs(delta));
  Var variation = mean_all(sum_rows(abs(grad_delta)));
  return add(scale(magnitude, w_magnitude), scale(variation, w_smoothness));
}

Var code_loss(Var z_shape, Var z_color, double weight) {
  if (!z_shape.valid() || !z_color.valid())
    throw UsageError("code_loss: invalid codes");
  if (z_shape.rows() != z_color.rows())
    throw UsageError("code_loss: shape/color batches must pair up");
  Var norms = add(smooth_row_norm(z_shape, kNormEps),
                  smooth_row_norm(z_color, kNormEps));
  return scale(mean_all(norms), weight);
}

LossBreakdown total_loss(Var col, Var def, Var eik, Var dis, Var cod) {
  LossBreakdown b;
  b.col = col;
  b.def = def;
  b.eik = eik;
  b.dis = dis;
  b.cod = cod;
  for (const auto& [name, v] :
       {std::pair<const char*, Var>{"color", col}, {"deformation", def},
        {"eikonal", eik}, {"displacement", dis}, {"code", cod}}) {
    if (!v.valid() || v.val().size() != 1)
      throw UsageError(std::string("total_loss: ") + name +
                       " must be a scalar");
    if (!std::isfinite(v.scalar_value()))
      throw NumericError(std::string("total_loss: non-finite ") + name +
                         " component");
  }
  b.total = add(add(add(add(col, def), eik), dis), cod);
  return b;
}

}  // namespace headsdf
