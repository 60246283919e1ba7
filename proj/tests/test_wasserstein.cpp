#include <cmath>

#include "doctest.h"
#include "swt/errors.hpp"
#include "swt/grad_check.hpp"
#include "swt/ops.hpp"
#include "swt/wasserstein.hpp"
#include "test_util.hpp"

using namespace swt;
using namespace swt::wasserstein;

namespace {

DiagGaussian random_gaussian(Rng& rng, std::size_t d, double var_lo = 0.05, double var_hi = 3.0) {
    DiagGaussian g;
    for (std::size_t i = 0; i < d; ++i) {
        g.mu.push_back(rng.uniform(-2.0, 2.0));
        g.var.push_back(rng.uniform(var_lo, var_hi));
    }
    return g;
}

double naive_w2sq(const DiagGaussian& a, const DiagGaussian& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        s += (a.mu[i] - b.mu[i]) * (a.mu[i] - b.mu[i]);
        double ds = std::sqrt(a.var[i]) - std::sqrt(b.var[i]);
        s += ds * ds;
    }
    return s;
}

}  // namespace

TEST_CASE("w2sq_diag examples") {
    DiagGaussian a{{0.3, -1.2}, {0.5, 2.0}};
    CHECK(w2sq_diag(a, a) == 0.0);
    CHECK(w2sq_diag(DiagGaussian{{0, 0}, {1, 1}}, DiagGaussian{{3, 0}, {1, 1}}) == 9.0);
    double closed = w2sq_diag(DiagGaussian{{0}, {1}}, DiagGaussian{{3}, {4}});
    CHECK(closed == 10.0);
    // n = 1e7 keeps the midpoint-rule truncation (~1.3/n) under 1e-6.
    CHECK(std::abs(closed - w2sq_oracle_1d(0, 1, 3, 4, 10'000'000)) <= 1e-6);
}

TEST_CASE("w2sq_oracle_1d examples") {
    CHECK(w2sq_oracle_1d(0.7, 2.0, 0.7, 2.0, 1000) <= 1e-9);
    CHECK(std::abs(w2sq_oracle_1d(0, 1, 3, 1, 100000) - 9.0) <= 1e-4);
    CHECK(std::abs(w2sq_oracle_1d(0, 1, 0, 4, 100000) - 1.0) <= 1e-4);
}

TEST_CASE("variance below the floor is clamped and counted") {
    reset_clamp_count();
    double d = w2sq_diag(DiagGaussian{{0}, {1e-9}}, DiagGaussian{{0}, {kVarianceFloor}});
    CHECK(d == 0.0);
    CHECK(clamp_count() == 1);
}

TEST_CASE("dimension mismatch is a dimension error") {
    CHECK_THROWS_AS(w2sq_diag(DiagGaussian{{0, 1}, {1, 1}}, DiagGaussian{{0}, {1}}), DimensionError);
    std::vector<DiagGaussian> qs{DiagGaussian{{0, 1}, {1, 1}}};
    std::vector<DiagGaussian> ks{DiagGaussian{{0}, {1}}};
    CHECK_THROWS_AS(pairwise_w2sq(qs, ks), DimensionError);
}

TEST_CASE("metric properties over seeded triples") {
    Rng rng(77, Stream::test);
    for (int t = 0; t < 1000; ++t) {
        std::size_t d = 1 + rng.below(8);
        DiagGaussian a = random_gaussian(rng, d), b = random_gaussian(rng, d), c = random_gaussian(rng, d);
        double ab = w2sq_diag(a, b), ba = w2sq_diag(b, a);
        CHECK(ab == ba);
        CHECK(ab >= 0.0);
        CHECK(w2sq_diag(a, a) == 0.0);
        CHECK(std::sqrt(w2sq_diag(a, c)) <= std::sqrt(ab) + std::sqrt(w2sq_diag(b, c)) + 1e-9);
    }
}

TEST_CASE("closed form agrees with the per-dimension quantile oracle") {
    Rng rng(101, Stream::test);
    for (int t = 0; t < 100; ++t) {
        std::size_t d = 1 + rng.below(8);
        DiagGaussian a = random_gaussian(rng, d, 0.05, 2.0), b = random_gaussian(rng, d, 0.05, 2.0);
        double oracle = 0.0;
        for (std::size_t i = 0; i < d; ++i) oracle += w2sq_oracle_1d(a.mu[i], a.var[i], b.mu[i], b.var[i], 1'000'000);
        CHECK(std::abs(w2sq_diag(a, b) - oracle) <= 1e-4);
    }
}

TEST_CASE("pairwise_w2sq examples") {
    Rng rng(5, Stream::test);
    std::vector<DiagGaussian> qs, ks;
    for (int i = 0; i < 3; ++i) qs.push_back(random_gaussian(rng, 4));
    for (int i = 0; i < 3; ++i) ks.push_back(random_gaussian(rng, 4));

    auto self = pairwise_w2sq(qs, qs);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(self[i * 3 + i]) <= 1e-12);

    auto qk = pairwise_w2sq(qs, ks);
    auto kq = pairwise_w2sq(ks, qs);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(std::abs(qk[i * 3 + j] - kq[j * 3 + i]) <= 1e-12);
            CHECK(std::abs(qk[i * 3 + j] - naive_w2sq(qs[i], ks[j])) <= 1e-9);
        }
}

TEST_CASE("pairwise_w2sq rectangular sets match the double loop") {
    Rng rng(6, Stream::test);
    std::vector<DiagGaussian> qs, ks;
    for (int i = 0; i < 5; ++i) qs.push_back(random_gaussian(rng, 6));
    for (int i = 0; i < 2; ++i) ks.push_back(random_gaussian(rng, 6));
    auto w = pairwise_w2sq(qs, ks);
    REQUIRE(w.size() == 10);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(w[i * 2 + j] - naive_w2sq(qs[i], ks[j])) <= 1e-9);
}

TEST_CASE("gradient of w2sq_diag matches central differences away from the sqrt singularity") {
    Rng rng(13, Stream::test);
    for (int t = 0; t < 20; ++t) {
        Tensor mu1 = test::random_tensor(rng, {5}, -2, 2);
        Tensor mu2 = test::random_tensor(rng, {5}, -2, 2);
        Tensor v1 = test::random_tensor(rng, {5}, 1e-3, 2.0);
        Tensor v2 = test::random_tensor(rng, {5}, 1e-3, 2.0);
        // Step must stay well below the smallest variance.
        auto r = grad_check([&]() { return w2sq_diag(mu1, v1, mu2, v2); }, {mu1, v1, mu2, v2}, 1e-7);
        CHECK(r.max_rel_error <= 1e-5);
    }
}

TEST_CASE("differentiable pairwise form matches plain form") {
    Rng rng(21, Stream::test);
    Tensor qm = test::random_tensor(rng, {2, 3, 4}), km = test::random_tensor(rng, {2, 5, 4});
    Tensor qv = test::random_tensor(rng, {2, 3, 4}, 0.1, 2.0), kv = test::random_tensor(rng, {2, 5, 4}, 0.1, 2.0);
    Tensor w = pairwise_w2sq(qm, qv, km, kv);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                DiagGaussian a, b;
                for (std::size_t t = 0; t < 4; ++t) {
                    a.mu.push_back(qm.at({s, i, t}));
                    a.var.push_back(qv.at({s, i, t}));
                    b.mu.push_back(km.at({s, j, t}));
                    b.var.push_back(kv.at({s, j, t}));
                }
                CHECK(std::abs(w.at({s, i, j}) - naive_w2sq(a, b)) <= 1e-9);
            }
    auto r = grad_check([&]() { return sum(pairwise_w2sq(qm, qv, km, kv)); }, {qm, qv, km, kv}, 1e-6);
    CHECK(r.max_rel_error <= 1e-5);
}
