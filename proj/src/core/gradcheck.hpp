#pragma once

#include <cstdint>
#include <string>

namespace headsdf {

// Result of the built-in finite-difference audit: every loss term is built
// on a toy two-hidden-layer model and its analytic parameter gradients are
// compared against central differences, entry by entry. Terms that read the
// field only count toward the first-order bound; terms built on spatial
// gradients of the field (Jacobian, Eikonal, displacement smoothness) stress
// the second-derivative path and get their own bound.
struct GradCheckReport {
  double max_first_order = 0.0;   // worst relative error, direct terms
  double max_second_order = 0.0;  // worst relative error, spatial-grad terms
  int checks = 0;                 // parameter entries compared
  bool pass = false;              // first < 1e-5 and second < 1e-4
  std::string text;               // one summary line per term
};

GradCheckReport run_gradient_checks(uint64_t seed);

}  // namespace headsdf
