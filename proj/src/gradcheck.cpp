#include "scseg/gradcheck.hpp"

#include <cmath>

#include "scseg/errors.hpp"

namespace scseg {

namespace {

double eval(const ScalarFn& f, std::span<const double> p) {
    const double v = f(p);
    if (!std::isfinite(v)) throw EvalError("finite_difference_check: non-finite value");
    return v;
}

} // namespace

std::vector<double> central_difference_gradient(const ScalarFn& f,
                                                std::span<const double> params,
                                                double step) {
    if (!(step > 0.0)) throw ContractError("central_difference_gradient: step must be > 0");
    std::vector<double> p(params.begin(), params.end());
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + step;
        const double hi = eval(f, p);
        p[i] = saved - step;
        const double lo = eval(f, p);
        p[i] = saved;
        g[i] = (hi - lo) / (2.0 * step);
    }
    return g;
}

double finite_difference_check_at(const ScalarFn& f, std::span<const double> params,
                                  double analytic, std::size_t index, double step) {
    if (!(step > 0.0)) throw ContractError("finite_difference_check_at: step must be > 0");
    if (index >= params.size())
        throw ContractError("finite_difference_check_at: index " + std::to_string(index) +
                            " out of range " + std::to_string(params.size()));
    std::vector<double> p(params.begin(), params.end());
    const double saved = p[index];
    p[index] = saved + step;
    const double hi = eval(f, p);
    p[index] = saved - step;
    const double lo = eval(f, p);
    const double fd = (hi - lo) / (2.0 * step);
    return std::fabs(analytic - fd) / std::max(1.0, std::fabs(analytic));
}

double finite_difference_check(const ScalarFn& f, std::span<const double> params,
                               std::span<const double> analytic, double step) {
    if (params.size() != analytic.size())
        throw ContractError("finite_difference_check: params/analytic size mismatch: " +
                            std::to_string(params.size()) + " vs " +
                            std::to_string(analytic.size()));
    const std::vector<double> fd = central_difference_gradient(f, params, step);
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        const double denom = std::max(1.0, std::fabs(analytic[i]));
        const double err = std::fabs(analytic[i] - fd[i]) / denom;
        if (err > worst) worst = err;
    }
    return worst;
}

} // namespace scseg
