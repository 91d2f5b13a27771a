#pragma once

#include <functional>
#include <span>
#include <vector>

namespace scseg {

/// Scalar function over a flat parameter vector.
using ScalarFn = std::function<double(std::span<const double>)>;

/// Compares an analytic gradient against central finite differences of f at
/// `params`. Returns max over coordinates of
///   |analytic_i - fd_i| / max(1, |analytic_i|)
/// Throws EvalError if any function evaluation is non-finite, ContractError
/// on size mismatch or non-positive step.
double finite_difference_check(const ScalarFn& f, std::span<const double> params,
                               std::span<const double> analytic, double step);

/// Central-difference gradient of f at params (2 evaluations per coordinate).
std::vector<double> central_difference_gradient(const ScalarFn& f,
                                                std::span<const double> params,
                                                double step);

/// Same comparison for the single coordinate `index` (2 evaluations); for
/// spot checks where the full gradient sweep is too expensive.
double finite_difference_check_at(const ScalarFn& f, std::span<const double> params,
                                  double analytic, std::size_t index, double step);

} // namespace scseg
