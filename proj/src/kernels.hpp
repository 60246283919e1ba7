#pragma once

#include <cstddef>
#include <vector>

// Plain row-major GEMM loops. All accumulate into C (C += op(A) op(B)), and
// every reduction runs in a fixed order so results are reproducible.
namespace swt::kernels {

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r = 0; r < m; ++r) {
        const double* arow = a + r * k;
        const double* brow = b + r * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void gemm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c,
                    std::size_t m, std::size_t n, std::size_t k) {
    std::vector<double> bt(n * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    gemm_nn(a, bt.data(), c, m, n, k);
}

}  // namespace swt::kernels
