#include "swt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "swt/errors.hpp"

namespace swt {

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params, double h) {
    for (Tensor& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    loss().backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) {
        analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                           : std::vector<double>(p.numel(), 0.0));
    }

    GradCheckResult result;
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < params.size(); ++t) {
        std::span<double> values = params[t].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double up = 0.0, down = 0.0;
            try {
                values[i] = saved + h;
                up = loss().item();
                values[i] = saved - h;
                down = loss().item();
            } catch (const NumericError& e) {
                values[i] = saved;
                throw NumericError("grad_check: tensor " + std::to_string(t) + " coordinate " +
                                   std::to_string(i) + ": " + e.what());
            }
            values[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("grad_check: non-finite loss at tensor " + std::to_string(t) +
                                   " coordinate " + std::to_string(i));
            }
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[t][i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            ++result.coordinates;
            if (err > result.max_rel_error || result.coordinates == 1) {
                result.max_rel_error = err;
                result.worst_tensor = t;
                result.worst_index = i;
                result.analytic = a;
                result.numeric = numeric;
            }
        }
    }
    for (Tensor& p : params) p.zero_grad();
    return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point, double h) {
    Tensor leaf = point.clone();
    return grad_check([&]() { return f(leaf); }, {leaf}, h);
}

}  // namespace swt
