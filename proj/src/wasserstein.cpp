#include "swt/wasserstein.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <map>
#include <mutex>

#include "swt/errors.hpp"
#include "swt/ops.hpp"

namespace swt::wasserstein {

namespace {

thread_local std::size_t t_clamps = 0;

double floored(double v) {
    if (v < kVarianceFloor) {
        ++t_clamps;
        return kVarianceFloor;
    }
    return v;
}

// Standard normal quantiles at midpoints (i + 0.5)/n, cached per n.
const std::vector<double>& quantile_grid(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, std::vector<double>> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    boost::math::normal standard;
    std::vector<double> grid(n);
    for (std::size_t i = 0; i < n; ++i) {
        grid[i] = boost::math::quantile(standard, (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    }
    return cache.emplace(n, std::move(grid)).first->second;
}

}  // namespace

std::size_t clamp_count() { return t_clamps; }
void reset_clamp_count() { t_clamps = 0; }
std::size_t* clamp_counter() { return &t_clamps; }

double w2sq_diag(const DiagGaussian& a, const DiagGaussian& b) {
    if (a.mu.size() != b.mu.size() || a.var.size() != a.mu.size() || b.var.size() != b.mu.size()) {
        throw DimensionError("w2sq_diag: dimension mismatch (" + std::to_string(a.mu.size()) + " vs " +
                             std::to_string(b.mu.size()) + ")");
    }
    double mean_term = 0.0;
    double cov_term = 0.0;
    for (std::size_t i = 0; i < a.mu.size(); ++i) {
        const double dm = a.mu[i] - b.mu[i];
        const double ds = std::sqrt(floored(a.var[i])) - std::sqrt(floored(b.var[i]));
        mean_term += dm * dm;
        cov_term += ds * ds;
    }
    return mean_term + cov_term;
}

Tensor w2sq_diag(const Tensor& mu1, const Tensor& var1, const Tensor& mu2, const Tensor& var2) {
    if (mu1.shape() != var1.shape() || mu1.shape() != mu2.shape() || mu1.shape() != var2.shape()) {
        throw DimensionError("w2sq_diag: shapes " + shape_str(mu1.shape()) + ", " + shape_str(var1.shape()) +
                             ", " + shape_str(mu2.shape()) + ", " + shape_str(var2.shape()));
    }
    Tensor s1 = sqrt(clamp_min(var1, kVarianceFloor, clamp_counter()));
    Tensor s2 = sqrt(clamp_min(var2, kVarianceFloor, clamp_counter()));
    return add(sum_last(square(sub(mu1, mu2))), sum_last(square(sub(s1, s2))));
}

double w2sq_oracle_1d(double mu1, double var1, double mu2, double var2, std::size_t n) {
    if (!(var1 > 0.0) || !(var2 > 0.0)) throw ContractError("w2sq_oracle_1d: variances must be positive");
    if (n == 0) throw ContractError("w2sq_oracle_1d: need at least one quadrature point");
    const std::vector<double>& z = quantile_grid(n);
    const double dm = mu1 - mu2;
    const double ds = std::sqrt(var1) - std::sqrt(var2);
    double total = 0.0;
    for (double q : z) {
        // F1^-1(u) - F2^-1(u) = (mu1 - mu2) + (s1 - s2) * Phi^-1(u)
        const double diff = dm + ds * q;
        total += diff * diff;
    }
    return total / static_cast<double>(n);
}

Tensor pairwise_w2sq(const Tensor& q_mu, const Tensor& q_var, const Tensor& k_mu, const Tensor& k_var) {
    if (q_mu.shape() != q_var.shape() || k_mu.shape() != k_var.shape()) {
        throw DimensionError("pairwise_w2sq: mean/variance shapes differ");
    }
    Tensor q_std = sqrt(clamp_min(q_var, kVarianceFloor, clamp_counter()));
    Tensor k_std = sqrt(clamp_min(k_var, kVarianceFloor, clamp_counter()));
    return add(pairwise_sqdist(q_mu, k_mu), pairwise_sqdist(q_std, k_std));
}

std::vector<double> pairwise_w2sq(std::span<const DiagGaussian> qs, std::span<const DiagGaussian> ks) {
    if (qs.empty() || ks.empty()) return {};
    const std::size_t d = qs.front().dim();
    auto pack = [d](std::span<const DiagGaussian> gs, bool variance) {
        std::vector<double> out;
        out.reserve(gs.size() * d);
        for (const DiagGaussian& g : gs) {
            if (g.dim() != d || g.var.size() != d) {
                throw DimensionError("pairwise_w2sq: dimension mismatch (" + std::to_string(g.dim()) +
                                     " vs " + std::to_string(d) + ")");
            }
            const auto& src = variance ? g.var : g.mu;
            out.insert(out.end(), src.begin(), src.end());
        }
        return Tensor({1, gs.size(), d}, std::move(out));
    };
    NoGradGuard no_grad;
    Tensor w = pairwise_w2sq(pack(qs, false), pack(qs, true), pack(ks, false), pack(ks, true));
    return {w.data().begin(), w.data().end()};
}

}  // namespace swt::wasserstein
