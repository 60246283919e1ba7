#include "swt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "kernels.hpp"
#include "swt/errors.hpp"

namespace swt {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

// Returns how many times y tiles over x when y matches x's trailing dims.
std::size_t trailing_repeats(const char* op, const Tensor& x, const Tensor& y) {
    const Shape& xs = x.shape();
    const Shape& ys = y.shape();
    bool ok = ys.size() <= xs.size();
    for (std::size_t i = 0; ok && i < ys.size(); ++i) {
        ok = ys[ys.size() - 1 - i] == xs[xs.size() - 1 - i];
    }
    if (!ok) {
        throw DimensionError(std::string(op) + ": " + shape_str(ys) + " is not a trailing shape of " +
                             shape_str(xs));
    }
    return y.numel() == 0 ? 0 : x.numel() / y.numel();
}

std::vector<double>* grad_of(TensorImpl& out, std::size_t parent) {
    TensorImpl& p = *out.parents[parent];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

// Shared helper for elementwise unary ops: dy/dx is computed from (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
    std::span<const double> xd = x.data();
    std::vector<double> y(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) y[i] = fwd(xd[i]);
    return make_result(op, x.shape(), std::move(y), {x}, [deriv](TensorImpl& out) {
        auto* gx = grad_of(out, 0);
        if (!gx) return;
        const std::vector<double>& xs = out.parents[0]->data;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            (*gx)[i] += out.grad[i] * deriv(xs[i], out.data[i]);
        }
    });
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
    return make_result("add", a.shape(), std::move(y), {a, b}, [](TensorImpl& out) {
        for (std::size_t p = 0; p < 2; ++p) {
            if (auto* g = grad_of(out, p))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
    return make_result("sub", a.shape(), std::move(y), {a, b}, [](TensorImpl& out) {
        if (auto* g = grad_of(out, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
        if (auto* g = grad_of(out, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= out.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
    return make_result("mul", a.shape(), std::move(y), {a, b}, [](TensorImpl& out) {
        const auto& ad = out.parents[0]->data;
        const auto& bd = out.parents[1]->data;
        if (auto* g = grad_of(out, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * bd[i];
        if (auto* g = grad_of(out, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i] * ad[i];
    });
}

Tensor scale(const Tensor& x, double factor) {
    return unary("scale", x, [factor](double v) { return v * factor; },
                 [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary("add_scalar", x, [value](double v) { return v + value; },
                 [](double, double) { return 1.0; });
}

Tensor add_trailing(const Tensor& x, const Tensor& y) {
    std::size_t reps = trailing_repeats("add_trailing", x, y);
    std::size_t n = y.numel();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < n; ++i) out[r * n + i] = x.data()[r * n + i] + y.data()[i];
    return make_result("add_trailing", x.shape(), std::move(out), {x, y}, [reps, n](TensorImpl& o) {
        if (auto* g = grad_of(o, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
        if (auto* g = grad_of(o, 1))
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t i = 0; i < n; ++i) (*g)[i] += o.grad[r * n + i];
    });
}

Tensor mul_trailing(const Tensor& x, const Tensor& y) {
    std::size_t reps = trailing_repeats("mul_trailing", x, y);
    std::size_t n = y.numel();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < n; ++i) out[r * n + i] = x.data()[r * n + i] * y.data()[i];
    return make_result("mul_trailing", x.shape(), std::move(out), {x, y}, [reps, n](TensorImpl& o) {
        const auto& xd = o.parents[0]->data;
        const auto& yd = o.parents[1]->data;
        if (auto* g = grad_of(o, 0))
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t i = 0; i < n; ++i) (*g)[r * n + i] += o.grad[r * n + i] * yd[i];
        if (auto* g = grad_of(o, 1))
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t i = 0; i < n; ++i) (*g)[i] += o.grad[r * n + i] * xd[r * n + i];
    });
}

Tensor square(const Tensor& x) {
    return unary("square", x, [](double v) { return v * v; },
                 [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw NumericError("sqrt: input must be strictly positive, got " + std::to_string(v));
    }
    return unary("sqrt", x, [](double v) { return std::sqrt(v); },
                 [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& x) {
    return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw NumericError("log: input must be strictly positive, got " + std::to_string(v));
    }
    return unary("log", x, [](double v) { return std::log(v); },
                 [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    return unary(
        "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
        [](double v, double) {
            double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
}

Tensor softplus(const Tensor& x) {
    return unary("softplus", x, softplus_scalar, [](double v, double) { return sigmoid(v); });
}

Tensor log_sigmoid(const Tensor& x) {
    return unary("log_sigmoid", x, [](double v) { return -softplus_scalar(-v); },
                 [](double v, double) { return sigmoid(-v); });
}

Tensor smooth_l1(const Tensor& x, double beta) {
    if (!(beta > 0.0)) throw ConfigError("smooth_l1: beta must be positive");
    return unary(
        "smooth_l1", x,
        [beta](double v) { return std::abs(v) <= beta ? 0.5 * v * v / beta : std::abs(v) - 0.5 * beta; },
        [beta](double v, double) { return std::abs(v) <= beta ? v / beta : (v > 0.0 ? 1.0 : -1.0); });
}

Tensor elu_plus_one(const Tensor& x) {
    return unary("elu_plus_one", x, [](double v) { return v >= 0.0 ? v + 1.0 : std::exp(v); },
                 [](double v, double y) { return v >= 0.0 ? 1.0 : y; });
}

Tensor clamp_min(const Tensor& x, double floor, std::size_t* counter) {
    if (counter) {
        for (double v : x.data()) *counter += v < floor ? 1 : 0;
    }
    return unary("clamp_min", x, [floor](double v) { return v < floor ? floor : v; },
                 [floor](double v, double) { return v < floor ? 0.0 : 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t k = b.dim(0);
    const std::size_t n = b.dim(1);
    const std::size_t m = k == 0 ? 0 : a.numel() / k;
    Shape shape = a.shape();
    shape.back() = n;
    std::vector<double> c(m * n, 0.0);
    kernels::gemm_nn(a.data().data(), b.data().data(), c.data(), m, k, n);
    return make_result("matmul", std::move(shape), std::move(c), {a, b}, [m, k, n](TensorImpl& out) {
        const auto& ad = out.parents[0]->data;
        const auto& bd = out.parents[1]->data;
        if (auto* g = grad_of(out, 0)) kernels::gemm_nt(out.grad.data(), bd.data(), g->data(), m, n, k);
        if (auto* g = grad_of(out, 1)) kernels::gemm_tn(ad.data(), out.grad.data(), g->data(), m, k, n);
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<double> c(batch * m * n, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
        kernels::gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * n, c.data() + s * m * n,
                         m, k, n);
    }
    return make_result("bmm", {batch, m, n}, std::move(c), {a, b}, [batch, m, k, n](TensorImpl& out) {
        const auto& ad = out.parents[0]->data;
        const auto& bd = out.parents[1]->data;
        auto* ga = grad_of(out, 0);
        auto* gb = grad_of(out, 1);
        for (std::size_t s = 0; s < batch; ++s) {
            const double* go = out.grad.data() + s * m * n;
            if (ga) kernels::gemm_nt(go, bd.data() + s * k * n, ga->data() + s * m * k, m, n, k);
            if (gb) kernels::gemm_tn(ad.data() + s * m * k, go, gb->data() + s * k * n, m, k, n);
        }
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    const std::size_t len = x.dim(axis);
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    std::span<const double> xd = x.data();
    std::vector<double> y(xd.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = xd[base];
            for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                double e = std::exp(xd[base + j * inner] - mx);
                y[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= total;
        }
    }
    return make_result("softmax", x.shape(), std::move(y), {x}, [outer, inner, len](TensorImpl& out) {
        auto* gx = grad_of(out, 0);
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j)
                    dot += out.grad[base + j * inner] * out.data[base + j * inner];
                for (std::size_t j = 0; j < len; ++j) {
                    const std::size_t idx = base + j * inner;
                    (*gx)[idx] += out.data[idx] * (out.grad[idx] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x.rank() < 1 || x.shape().back() == 0) throw DimensionError("layer_norm: empty last axis");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::span<const double> xd = x.data();
    std::vector<double> y(xd.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += row[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) y[r * n + i] = (row[i] - mu) * inv_std[r];
    }
    return make_result("layer_norm", x.shape(), std::move(y), {x},
                       [rows, n, inv_std = std::move(inv_std)](TensorImpl& out) {
                           auto* gx = grad_of(out, 0);
                           if (!gx) return;
                           const double inv_n = 1.0 / static_cast<double>(n);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* g = out.grad.data() + r * n;
                               const double* xh = out.data.data() + r * n;
                               double g_mean = 0.0, gx_mean = 0.0;
                               for (std::size_t i = 0; i < n; ++i) {
                                   g_mean += g[i];
                                   gx_mean += g[i] * xh[i];
                               }
                               g_mean *= inv_n;
                               gx_mean *= inv_n;
                               for (std::size_t i = 0; i < n; ++i) {
                                   (*gx)[r * n + i] += inv_std[r] * (g[i] - g_mean - xh[i] * gx_mean);
                               }
                           }
                       });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> y(x.data().begin(), x.data().end());
    return make_result("reshape", std::move(shape), std::move(y), {x}, [](TensorImpl& out) {
        if (auto* g = grad_of(out, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += out.grad[i];
    });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t r = x.rank();
    std::vector<bool> seen(r, false);
    bool ok = perm.size() == r;
    for (std::size_t i = 0; ok && i < r; ++i) {
        ok = perm[i] < r && !seen[perm[i]];
        if (ok) seen[perm[i]] = true;
    }
    if (!ok) throw DimensionError("permute: invalid permutation for shape " + shape_str(x.shape()));

    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
    // map[o] = source flat index for output flat index o
    std::vector<std::size_t> map(x.numel());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < map.size(); ++o) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[perm[i]];
        map[o] = src;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    std::vector<double> y(map.size());
    for (std::size_t o = 0; o < map.size(); ++o) y[o] = x.data()[map[o]];
    return make_result("permute", std::move(out_shape), std::move(y), {x},
                       [map = std::move(map)](TensorImpl& out) {
                           if (auto* g = grad_of(out, 0))
                               for (std::size_t o = 0; o < map.size(); ++o) (*g)[map[o]] += out.grad[o];
                       });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return make_result("sum", {}, {total}, {x}, [](TensorImpl& out) {
        if (auto* g = grad_of(out, 0))
            for (double& v : *g) v += out.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ContractError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_last(const Tensor& x) {
    if (x.rank() < 1) throw DimensionError("sum_last: scalar input");
    const std::size_t n = x.shape().back();
    const std::size_t rows = n == 0 ? 0 : x.numel() / n;
    std::vector<double> y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < n; ++i) y[r] += x.data()[r * n + i];
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    return make_result("sum_last", std::move(shape), std::move(y), {x}, [rows, n](TensorImpl& out) {
        if (auto* g = grad_of(out, 0))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < n; ++i) (*g)[r * n + i] += out.grad[r];
    });
}

Tensor mean_last(const Tensor& x) {
    return scale(sum_last(x), 1.0 / static_cast<double>(x.shape().back()));
}

Tensor pairwise_sqdist(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
        throw DimensionError("pairwise_sqdist: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t batch = a.dim(0), lq = a.dim(1), lk = b.dim(1), d = a.dim(2);
    std::vector<double> out(batch * lq * lk, 0.0);
    std::vector<double> na(lq), nb(lk);
    for (std::size_t s = 0; s < batch; ++s) {
        const double* ad = a.data().data() + s * lq * d;
        const double* bd = b.data().data() + s * lk * d;
        double* o = out.data() + s * lq * lk;
        for (std::size_t i = 0; i < lq; ++i) {
            na[i] = 0.0;
            for (std::size_t t = 0; t < d; ++t) na[i] += ad[i * d + t] * ad[i * d + t];
        }
        for (std::size_t j = 0; j < lk; ++j) {
            nb[j] = 0.0;
            for (std::size_t t = 0; t < d; ++t) nb[j] += bd[j * d + t] * bd[j * d + t];
        }
        kernels::gemm_nt(ad, bd, o, lq, d, lk);
        for (std::size_t i = 0; i < lq; ++i)
            for (std::size_t j = 0; j < lk; ++j)
                o[i * lk + j] = std::max(0.0, na[i] + nb[j] - 2.0 * o[i * lk + j]);
    }
    return make_result(
        "pairwise_sqdist", {batch, lq, lk}, std::move(out), {a, b}, [batch, lq, lk, d](TensorImpl& o) {
            const auto& ad = o.parents[0]->data;
            const auto& bd = o.parents[1]->data;
            auto* ga = grad_of(o, 0);
            auto* gb = grad_of(o, 1);
            for (std::size_t s = 0; s < batch; ++s) {
                const double* g = o.grad.data() + s * lq * lk;
                const double* as = ad.data() + s * lq * d;
                const double* bs = bd.data() + s * lk * d;
                if (ga) {
                    // dA_i = 2 (rowsum(g)_i a_i - (g B)_i)
                    double* gas = ga->data() + s * lq * d;
                    std::vector<double> gbm(lq * d, 0.0);
                    kernels::gemm_nn(g, bs, gbm.data(), lq, lk, d);
                    for (std::size_t i = 0; i < lq; ++i) {
                        double rs = 0.0;
                        for (std::size_t j = 0; j < lk; ++j) rs += g[i * lk + j];
                        for (std::size_t t = 0; t < d; ++t)
                            gas[i * d + t] += 2.0 * (rs * as[i * d + t] - gbm[i * d + t]);
                    }
                }
                if (gb) {
                    // dB_j = 2 (colsum(g)_j b_j - (g^T A)_j)
                    double* gbs = gb->data() + s * lk * d;
                    std::vector<double> gta(lk * d, 0.0);
                    kernels::gemm_tn(g, as, gta.data(), lq, lk, d);
                    for (std::size_t j = 0; j < lk; ++j) {
                        double cs = 0.0;
                        for (std::size_t i = 0; i < lq; ++i) cs += g[i * lk + j];
                        for (std::size_t t = 0; t < d; ++t)
                            gbs[j * d + t] += 2.0 * (cs * bs[j * d + t] - gta[j * d + t]);
                    }
                }
            }
        });
}

Tensor prepend_row(const Tensor& x, const Tensor& row) {
    if (x.rank() != 3 || row.rank() != 1 || row.dim(0) != x.dim(2)) {
        throw DimensionError("prepend_row: expected [B,L,D] and [D], got " + shape_str(x.shape()) +
                             " and " + shape_str(row.shape()));
    }
    const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
    std::vector<double> y(batch * (len + 1) * d);
    for (std::size_t s = 0; s < batch; ++s) {
        double* dst = y.data() + s * (len + 1) * d;
        std::copy(row.data().begin(), row.data().end(), dst);
        std::copy_n(x.data().data() + s * len * d, len * d, dst + d);
    }
    return make_result("prepend_row", {batch, len + 1, d}, std::move(y), {x, row},
                       [batch, len, d](TensorImpl& out) {
                           auto* gx = grad_of(out, 0);
                           auto* gr = grad_of(out, 1);
                           for (std::size_t s = 0; s < batch; ++s) {
                               const double* g = out.grad.data() + s * (len + 1) * d;
                               if (gr)
                                   for (std::size_t t = 0; t < d; ++t) (*gr)[t] += g[t];
                               if (gx)
                                   for (std::size_t t = 0; t < len * d; ++t)
                                       (*gx)[s * len * d + t] += g[d + t];
                           }
                       });
}

Tensor replace_rows(const Tensor& x, const Tensor& row, std::span<const std::uint8_t> replace) {
    if (row.rank() != 1 || x.rank() < 1 || x.shape().back() != row.dim(0)) {
        throw DimensionError("replace_rows: row " + shape_str(row.shape()) + " does not match " +
                             shape_str(x.shape()));
    }
    const std::size_t d = row.dim(0);
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    if (replace.size() != rows) {
        throw DimensionError("replace_rows: mask has " + std::to_string(replace.size()) + " entries for " +
                             std::to_string(rows) + " rows");
    }
    std::vector<double> y(x.data().begin(), x.data().end());
    for (std::size_t r = 0; r < rows; ++r) {
        if (replace[r]) std::copy(row.data().begin(), row.data().end(), y.begin() + r * d);
    }
    std::vector<std::uint8_t> keep(replace.begin(), replace.end());
    return make_result("replace_rows", x.shape(), std::move(y), {x, row},
                       [rows, d, keep = std::move(keep)](TensorImpl& out) {
                           auto* gx = grad_of(out, 0);
                           auto* gr = grad_of(out, 1);
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t t = 0; t < d; ++t) {
                                   double g = out.grad[r * d + t];
                                   if (keep[r]) {
                                       if (gr) (*gr)[t] += g;
                                   } else if (gx) {
                                       (*gx)[r * d + t] += g;
                                   }
                               }
                           }
                       });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    if (x.rank() < 1) throw DimensionError("gather_rows: scalar input");
    const std::size_t d = x.shape().back();
    const std::size_t total = d == 0 ? 0 : x.numel() / d;
    std::vector<double> y(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= total) {
            throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                                 shape_str(x.shape()));
        }
        std::copy_n(x.data().data() + rows[i] * d, d, y.data() + i * d);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result("gather_rows", {rows.size(), d}, std::move(y), {x},
                       [d, idx = std::move(idx)](TensorImpl& out) {
                           auto* gx = grad_of(out, 0);
                           if (!gx) return;
                           for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t t = 0; t < d; ++t)
                                   (*gx)[idx[i] * d + t] += out.grad[i * d + t];
                       });
}

Tensor split_heads(const Tensor& x, std::size_t parts, std::size_t part, std::size_t heads) {
    if (x.rank() != 3 || parts == 0 || part >= parts || heads == 0 || x.dim(2) % (parts * heads) != 0) {
        throw DimensionError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                             std::to_string(parts) + " parts of " + std::to_string(heads) + " heads");
    }
    const std::size_t batch = x.dim(0), len = x.dim(1), width = x.dim(2);
    const std::size_t model = width / parts, hd = model / heads;
    std::vector<double> y(batch * heads * len * hd);
    auto src_index = [=](std::size_t b, std::size_t h, std::size_t l, std::size_t t) {
        return (b * len + l) * width + part * model + h * hd + t;
    };
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t t = 0; t < hd; ++t)
                    y[((b * heads + h) * len + l) * hd + t] = x.data()[src_index(b, h, l, t)];
    return make_result("split_heads", {batch * heads, len, hd}, std::move(y), {x},
                       [=](TensorImpl& out) {
                           auto* gx = grad_of(out, 0);
                           if (!gx) return;
                           for (std::size_t b = 0; b < batch; ++b)
                               for (std::size_t h = 0; h < heads; ++h)
                                   for (std::size_t l = 0; l < len; ++l)
                                       for (std::size_t t = 0; t < hd; ++t)
                                           (*gx)[src_index(b, h, l, t)] +=
                                               out.grad[((b * heads + h) * len + l) * hd + t];
                       });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) {
        throw DimensionError("merge_heads: cannot merge " + shape_str(x.shape()) + " over " +
                             std::to_string(heads) + " heads");
    }
    const std::size_t batch = x.dim(0) / heads, len = x.dim(1), hd = x.dim(2);
    const std::size_t width = heads * hd;
    std::vector<double> y(batch * len * width);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t l = 0; l < len; ++l)
                std::copy_n(x.data().data() + ((b * heads + h) * len + l) * hd, hd,
                            y.data() + (b * len + l) * width + h * hd);
    return make_result("merge_heads", {batch, len, width}, std::move(y), {x}, [=](TensorImpl& out) {
        auto* gx = grad_of(out, 0);
        if (!gx) return;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t t = 0; t < hd; ++t)
                        (*gx)[((b * heads + h) * len + l) * hd + t] +=
                            out.grad[(b * len + l) * width + h * hd + t];
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(0) == 0) {
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    std::vector<double> probs(batch * classes);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw ContractError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        }
        const double* row = logits.data().data() + i * classes;
        double mx = *std::max_element(row, row + classes);
        double total = 0.0;
        for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
        double lse = mx + std::log(total);
        for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(row[c] - lse);
        loss += lse - row[labels[i]];
    }
    loss /= static_cast<double>(batch);
    std::vector<int> lab(labels.begin(), labels.end());
    return make_result("cross_entropy", {}, {loss}, {logits},
                       [batch, classes, probs = std::move(probs), lab = std::move(lab)](TensorImpl& out) {
                           auto* g = grad_of(out, 0);
                           if (!g) return;
                           const double s = out.grad[0] / static_cast<double>(batch);
                           for (std::size_t i = 0; i < batch; ++i) {
                               for (std::size_t c = 0; c < classes; ++c) {
                                   double target = static_cast<int>(c) == lab[i] ? 1.0 : 0.0;
                                   (*g)[i * classes + c] += s * (probs[i * classes + c] - target);
                               }
                           }
                       });
}

}  // namespace swt
