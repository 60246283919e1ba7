#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "swt/tensor.hpp"

namespace swt {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients against central differences.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// `loss` must rebuild the graph from the current parameter values on every
/// call. Throws NumericError naming the coordinate if a perturbed evaluation
/// is not finite.
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                           double h = 1e-5);

// Single-input convenience: f is evaluated at `point` (which is made a leaf
// requiring grad).
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point,
                           double h = 1e-5);

}  // namespace swt
