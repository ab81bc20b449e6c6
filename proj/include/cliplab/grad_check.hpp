#pragma once

#include <functional>
#include <vector>

#include "cliplab/tensor.hpp"

namespace cliplab {

// Scalar loss as a plain function of a parameter list. Used to probe
// autodiff results against central finite differences.
using LossFn = std::function<real(const std::vector<Tensor>&)>;

// Central-difference gradient, perturbing one coordinate at a time.
// Throws NonFiniteError when a probe produces a non-finite loss.
std::vector<Tensor> finite_diff_grad(const LossFn& f, const std::vector<Tensor>& theta,
                                     real h = real(1e-5));

// max_i |a_i - b_i| / max(max_i |b_i|, floor); the floor guards the
// all-zero-gradient case.
real max_rel_error(const std::vector<Tensor>& analytic, const std::vector<Tensor>& reference,
                   real floor_value = real(1e-8));

}  // namespace cliplab
