#pragma once

#include "core/config.hpp"
#include "core/tape.hpp"

namespace headsdf {

// Taped scalars for one training step. `total` is the optimization root;
// stage 1 carries a literal zero displacement term.
struct LossBreakdown {
  Var col;
  Var def;
  Var eik;
  Var dis;
  Var cod;
  Var total;
};

// Row-wise spatial Jacobian of a 3-vector field as a [N,9] tensor (rows of
// the Jacobian side by side), built from one gradient pass per component.
Var spatial_jacobian(Var f, Var x);

// Weighted mean over rays of the per-ray L1 color error (channel sum).
// An empty batch contributes zero.
Var color_loss(Var c, Var c_gt, double weight);

// Magnitude + smoothness penalty on the deformation field: weighted means of
// the per-point offset norm and of the Jacobian Frobenius norm ([N,9]).
Var deformation_loss(Var d, Var jacobian, double w_magnitude,
                     double w_smoothness);

// Unit-gradient penalty: weighted mean of (|grad s| - 1)^2.
Var eikonal_loss(Var grad_s, double weight);

// Displacement keep-small + total-variation penalty: weighted means of |delta|
// and of the L1 norm of its spatial gradient.
Var displacement_loss(Var delta, Var grad_delta, double w_magnitude,
                      double w_smoothness);

// Gaussian-prior code penalty: weighted mean over identities of
// |z_shape| + |z_color| (L2 norms).
Var code_loss(Var z_shape, Var z_color, double weight);

// Sums the five components in fixed order; throws NumericError if any
// component is non-finite.
LossBreakdown total_loss(Var col, Var def, Var eik, Var dis, Var cod);

}  // namespace headsdf
