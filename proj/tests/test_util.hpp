#pragma once

#include <cstdint>
#include <vector>

#include "swt/rng.hpp"
#include "swt/tensor.hpp"

namespace swt::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(data), requires_grad);
}

// Naive triple loop, independent of the GEMM kernels.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    return c;
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace swt::test
