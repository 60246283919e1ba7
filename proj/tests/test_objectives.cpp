#include <cmath>

#include "doctest.h"
#include "swt/errors.hpp"
#include "swt/grad_check.hpp"
#include "swt/objectives.hpp"
#include "swt/ops.hpp"
#include "swt/wasserstein.hpp"
#include "test_util.hpp"

using namespace swt;
using namespace swt::objectives;
using swt::test::random_tensor;
using swt::test::to_vec;

namespace {

// 1D Gaussians, one pair per row.
GaussianSequence g1(std::vector<double> mu, std::vector<double> var) {
    const std::size_t n = mu.size();
    return {Tensor({n, 1}, std::move(mu)), Tensor({n, 1}, std::move(var))};
}

ContrastivePairs one_pair(double a, double p, double n) {
    return {g1({a}, {1.0}), g1({p}, {1.0}), g1({n}, {1.0})};
}

GaussianSequence random_gaussians(Rng& rng, Shape shape, bool grad = false) {
    return {random_tensor(rng, shape, -1.0, 1.0, grad), random_tensor(rng, shape, 0.2, 2.0, grad)};
}

double softplus_ref(double x) { return std::log1p(std::exp(x)); }

}  // namespace

TEST_CASE("data2vec_target") {
    Rng rng(1, Stream::test);
    Tensor a = random_tensor(rng, {2, 3, 5});
    Tensor b = random_tensor(rng, {2, 3, 5});
    std::vector<Tensor> one{a};
    CHECK(to_vec(data2vec_target(one, 1)) == to_vec(layer_norm(a, kTargetNormEps)));
    std::vector<Tensor> same{a, a};
    auto t = to_vec(data2vec_target(same, 2));
    auto n = to_vec(layer_norm(a, kTargetNormEps));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i] - n[i]) <= 1e-15);

    std::vector<Tensor> blocks{b, a};
    CHECK_THROWS_AS(data2vec_target(blocks, 3), ConfigError);
    CHECK_THROWS_AS(data2vec_target(blocks, 0), ConfigError);
    CHECK_FALSE(data2vec_target(blocks, 2).requires_grad());
}

TEST_CASE("data2vec_target matches hand normalization and averaging") {
    // depth 2, two tokens of width 3
    const std::vector<double> x0{1.0, 2.0, 4.0, -1.0, 0.5, 3.0};
    const std::vector<double> x1{0.0, -2.0, 1.0, 2.0, 2.0, 5.0};
    std::vector<Tensor> blocks{Tensor({1, 2, 3}, x0), Tensor({1, 2, 3}, x1)};
    auto got = to_vec(data2vec_target(blocks, 2));
    auto norm = [](const double* v, std::size_t i) {
        double m = (v[0] + v[1] + v[2]) / 3.0;
        double var = ((v[0] - m) * (v[0] - m) + (v[1] - m) * (v[1] - m) + (v[2] - m) * (v[2] - m)) / 3.0;
        return (v[i] - m) / std::sqrt(var + 1e-5);
    };
    for (std::size_t tok = 0; tok < 2; ++tok)
        for (std::size_t i = 0; i < 3; ++i) {
            double want = 0.5 * (norm(x0.data() + 3 * tok, i) + norm(x1.data() + 3 * tok, i));
            CHECK(std::abs(got[3 * tok + i] - want) <= 1e-12);
        }
}

TEST_CASE("smoothed_l1") {
    std::vector<data::MaskSpec> masks{{2, {1}, 0.5}};
    Tensor target = Tensor::zeros({1, 3, 2});
    CHECK(smoothed_l1(target, target, 1.0, masks).item() == 0.0);

    // only row 2 (mask index 1) counts
    Tensor pred({1, 3, 2}, {100.0, 100.0, -7.0, 7.0, 3.0, -3.0});
    CHECK(smoothed_l1(pred, target, 1.0, masks).item() == doctest::Approx(2.5).epsilon(1e-15));

    Tensor edge({1, 3, 2}, {0, 0, 0, 0, 0.4, -0.4});
    CHECK(smoothed_l1(edge, target, 0.4, masks).item() == doctest::Approx(0.2).epsilon(1e-15));
    // both branches agree at the boundary
    const double beta = 0.4;
    CHECK(0.5 * beta * beta / beta == doctest::Approx(beta - 0.5 * beta));

    std::vector<data::MaskSpec> empty{{2, {}, 0.0}};
    CHECK_THROWS_AS(smoothed_l1(pred, target, 1.0, empty), ContractError);
    CHECK_THROWS_AS(smoothed_l1(pred, target, 0.0, masks), ConfigError);
}

TEST_CASE("pretrain regularizer closed values") {
    const double lambda = 1e-5;
    CHECK(std::abs(pretrain_regularizer(Tensor::scalar(0.0), lambda).item() - 0.693147180559945 * lambda) <= 1e-15);
    CHECK(std::abs(pretrain_regularizer(Tensor::scalar(0.0), 1.0).item() - 0.693147) <= 1e-6);
    CHECK(std::abs(pretrain_regularizer(Tensor::scalar(2.0), 1.0).item() - 2.126928) <= 1e-6);
    CHECK(std::abs(pretrain_regularizer(Tensor::scalar(2.0), 1.0).item() - softplus_ref(2.0)) <= 1e-15);
    double prev = -1.0;
    for (double w : {0.0, 1.0, 2.0, 4.0}) {
        double v = pretrain_regularizer(Tensor::scalar(w), 0.3).item();
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("pretrain_loss composition") {
    Rng rng(2, Stream::test);
    std::vector<data::MaskSpec> masks{{4, {0, 2}, 0.5}, {4, {3}, 0.25}};
    Tensor pred = random_tensor(rng, {2, 5, 3});
    Tensor target = random_tensor(rng, {2, 5, 3});
    GaussianSequence s = random_gaussians(rng, {2, 5, 3});
    GaussianSequence p = random_gaussians(rng, {2, 5, 3});

    auto off = pretrain_loss(pred, target, masks, s, p, 0.0);
    CHECK(off.total.item() == off.reconstruction.item());
    CHECK(off.regularizer.item() == 0.0);

    auto on = pretrain_loss(pred, target, masks, s, p, 0.7);
    // hand mean of W2^2 over rows (0,1), (0,3), (1,4)
    const std::size_t rows[3][2] = {{0, 1}, {0, 3}, {1, 4}};
    double w = 0.0;
    for (auto [b, l] : rows)
        for (std::size_t d = 0; d < 3; ++d) {
            double dm = s.mu.at({b, l, d}) - p.mu.at({b, l, d});
            double ds = std::sqrt(s.var.at({b, l, d})) - std::sqrt(p.var.at({b, l, d}));
            w += dm * dm + ds * ds;
        }
    w /= 3.0;
    CHECK(std::abs(on.w2_mean.item() - w) <= 1e-12);
    CHECK(std::abs(on.total.item() - (on.reconstruction.item() + 0.7 * softplus_ref(w))) <= 1e-12);

    // identical distributions: penalty is lambda * ln 2
    auto zero = pretrain_loss(pred, target, masks, s, s, 2.0);
    CHECK(std::abs(zero.regularizer.item() - 2.0 * std::log(2.0)) <= 1e-12);
}

TEST_CASE("pretrain_loss is increasing in the mean W2 distance") {
    std::vector<data::MaskSpec> masks{{1, {0}, 1.0}};
    Tensor zeros = Tensor::zeros({1, 2, 1});
    GaussianSequence s{Tensor::zeros({1, 2, 1}), Tensor::full({1, 2, 1}, 1.0)};
    double prev = -1.0;
    for (double w : {0.0, 1.0, 2.0, 4.0}) {
        GaussianSequence p{Tensor({1, 2, 1}, {0.0, std::sqrt(w)}), Tensor::full({1, 2, 1}, 1.0)};
        auto parts = pretrain_loss(zeros, zeros, masks, s, p, 1e-5);
        CHECK(std::abs(parts.w2_mean.item() - w) <= 1e-12);
        CHECK(parts.total.item() > prev);
        prev = parts.total.item();
    }
}

TEST_CASE("l1_reg") {
    CHECK(l1_reg(one_pair(0, 1, -1)).item() == doctest::Approx(std::log(0.5)).epsilon(1e-15));
    // d+ = 1, d- = 3 -> d+ - d- = -2
    ContrastivePairs p{g1({0}, {1}), g1({1}, {1}), g1({std::sqrt(3.0)}, {1})};
    CHECK(std::abs(l1_reg(p).item() - (-2.126928)) <= 1e-6);
    // log sigmoid(x) -> 0- as x -> +inf and behaves like x as x -> -inf
    double far = l1_reg(one_pair(0, 30, 0)).item();
    CHECK(far <= 0.0);
    CHECK(far > -1e-300);
    CHECK(l1_reg(one_pair(0, 0, 30)).item() == doctest::Approx(-900.0).epsilon(1e-15));
}

TEST_CASE("l2_reg") {
    CHECK(l2_reg(one_pair(0, 1, 3)).item() == 0.0);  // d+ = 1 <= d(p, n) = 4
    // d+ = 5, d(p, n) = 2
    ContrastivePairs p{g1({0}, {1}), g1({std::sqrt(5.0)}, {1}), g1({std::sqrt(5.0) + std::sqrt(2.0)}, {1})};
    CHECK(std::abs(l2_reg(p).item() - 3.0) <= 1e-12);
    CHECK(l2_reg(one_pair(2, 2, -1)).item() == 0.0);
}

TEST_CASE("finetune_loss") {
    Rng rng(3, Stream::test);
    Tensor logits = random_tensor(rng, {4, 3});
    std::vector<int> labels{0, 2, 1, 1};
    ContrastivePairs pairs{random_gaussians(rng, {4, 5}), random_gaussians(rng, {4, 5}),
                           random_gaussians(rng, {4, 5})};
    for (SignMode m : {SignMode::corrected, SignMode::paper_literal}) {
        auto parts = finetune_loss(logits, labels, pairs, 0.0, 0.0, m);
        CHECK(parts.total.item() == parts.ce.item());
    }

    // equidistant pairs: corrected adds ln 2 * lambda1 + lambda2 * hinge
    ContrastivePairs eq{g1({0, 0}, {1, 1}), g1({1, -2}, {1, 1}), g1({-1, 2}, {1, 1})};
    Tensor lg({2, 2}, {0.3, -0.1, 0.0, 1.0});
    std::vector<int> lb{0, 1};
    auto parts = finetune_loss(lg, lb, eq, 0.5, 0.25, SignMode::corrected);
    double hinge = 0.5 * (std::max(0.0, 1.0 - 4.0) + std::max(0.0, 4.0 - 16.0));
    CHECK(std::abs(parts.total.item() - (parts.ce.item() + 0.5 * std::log(2.0) + 0.25 * hinge)) <= 1e-12);

    CHECK_THROWS_AS(parse_sign_mode("literal"), ConfigError);
    CHECK(parse_sign_mode("paper_literal") == SignMode::paper_literal);
}

TEST_CASE("finetune_loss single example by hand") {
    // anchor N(0,1), positive N(2,1), negative N(3,1): d+ = 4, d- = 9, d(p, n) = 1
    ContrastivePairs p = one_pair(0, 2, 3);
    Tensor logits({1, 2}, {1.0, 0.0});
    std::vector<int> label{0};
    const double ce = std::log(1.0 + std::exp(-1.0));
    const double l1 = 0.01, l2 = 0.02;
    auto c = finetune_loss(logits, label, p, l1, l2, SignMode::corrected);
    CHECK(std::abs(c.total.item() - (ce + l1 * std::log1p(std::exp(-5.0)) + l2 * 3.0)) <= 1e-9);
    auto lit = finetune_loss(logits, label, p, l1, l2, SignMode::paper_literal);
    CHECK(std::abs(lit.total.item() - (ce - l1 * -std::log1p(std::exp(5.0)) + l2 * 3.0)) <= 1e-9);
}

TEST_CASE("paper_literal mode reproduces its algebra exactly") {
    Rng rng(4, Stream::test);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor(rng, {3, 4}, -2, 2);
        std::vector<int> labels{1, 3, 0};
        ContrastivePairs pairs{random_gaussians(rng, {3, 2}), random_gaussians(rng, {3, 2}),
                               random_gaussians(rng, {3, 2})};
        const double a = rng.uniform(0, 1), b = rng.uniform(0, 1);
        auto parts = finetune_loss(logits, labels, pairs, a, b, SignMode::paper_literal);
        CHECK(std::abs(parts.total.item() - (parts.ce.item() - a * parts.l1.item() + b * parts.l2.item())) <= 1e-12);
        auto l1 = to_vec(l1_reg(pairs));
        auto l2 = to_vec(l2_reg(pairs));
        for (double v : l1) CHECK(v <= 0.0);
        for (double v : l2) CHECK(v >= 0.0);
        CHECK(std::abs(parts.l1.item() - (l1[0] + l1[1] + l1[2]) / 3.0) <= 1e-15);
    }
}

TEST_CASE("a corrected-mode step on the regularizer shrinks d+ - d-") {
    Rng rng(5, Stream::test);
    for (int trial = 0; trial < 10; ++trial) {
        ContrastivePairs pairs{random_gaussians(rng, {1, 4}, true), random_gaussians(rng, {1, 4}, true),
                               random_gaussians(rng, {1, 4}, true)};
        auto gap = [](const ContrastivePairs& p) {
            NoGradGuard g;
            return sub(wasserstein::w2sq_diag(p.anchor.mu, p.anchor.var, p.positive.mu, p.positive.var),
                       wasserstein::w2sq_diag(p.anchor.mu, p.anchor.var, p.negative.mu, p.negative.var))
                .item();
        };
        const double before = gap(pairs);
        Tensor logits = Tensor::zeros({1, 2});
        std::vector<int> label{0};
        auto parts = finetune_loss(logits, label, pairs, 1.0, 0.0, SignMode::corrected);
        parts.total.backward();
        for (GaussianSequence* g : {&pairs.anchor, &pairs.positive, &pairs.negative})
            for (Tensor* t : {&g->mu, &g->var}) {
                auto d = t->mutable_data();
                for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 1e-3 * t->grad()[i];
            }
        CHECK(gap(pairs) < before);
    }
}

TEST_CASE("loss parts pass finite-difference checks away from the hinge kink") {
    Rng rng(6, Stream::test);
    int checked = 0;
    while (checked < 5) {
        ContrastivePairs pairs{random_gaussians(rng, {3, 3}, true), random_gaussians(rng, {3, 3}, true),
                               random_gaussians(rng, {3, 3}, true)};
        {
            NoGradGuard g;
            auto dp = to_vec(wasserstein::w2sq_diag(pairs.anchor.mu, pairs.anchor.var, pairs.positive.mu,
                                                    pairs.positive.var));
            auto dpn = to_vec(wasserstein::w2sq_diag(pairs.positive.mu, pairs.positive.var, pairs.negative.mu,
                                                     pairs.negative.var));
            bool near = false;
            for (std::size_t i = 0; i < 3; ++i) near |= std::abs(dp[i] - dpn[i]) < 1e-3;
            if (near) continue;
        }
        Tensor logits = random_tensor(rng, {3, 4}, -1, 1, true);
        std::vector<int> labels{0, 3, 2};
        std::vector<Tensor> params{logits};
        for (GaussianSequence* g : {&pairs.anchor, &pairs.positive, &pairs.negative}) {
            params.push_back(g->mu);
            params.push_back(g->var);
        }
        for (SignMode m : {SignMode::corrected, SignMode::paper_literal}) {
            auto res = grad_check([&] { return finetune_loss(logits, labels, pairs, 0.3, 0.7, m).total; }, params);
            CHECK(res.max_rel_error <= 1e-5);
        }
        Tensor pred = random_tensor(rng, {3, 4, 3}, -1, 1, true);
        Tensor target = random_tensor(rng, {3, 4, 3});
        GaussianSequence s = random_gaussians(rng, {3, 4, 3}, true);
        GaussianSequence p = random_gaussians(rng, {3, 4, 3}, true);
        std::vector<data::MaskSpec> masks{{3, {0, 2}, 0.6}, {3, {1}, 0.3}, {3, {0}, 0.3}};
        auto res = grad_check([&] { return pretrain_loss(pred, target, masks, s, p, 0.5, 0.3).total; },
                              {pred, s.mu, s.var, p.mu, p.var});
        CHECK(res.max_rel_error <= 1e-5);
        ++checked;
    }
}

TEST_CASE("pool_distribution") {
    GaussianSequence single{Tensor({1, 1, 2}, {0.5, -1.0}), Tensor({1, 1, 2}, {2.0, 3.0})};
    for (PoolMode m : {PoolMode::class_token, PoolMode::mean_pool}) {
        auto g = pool_distribution(single, m);
        CHECK(to_vec(g.mu) == std::vector<double>{0.5, -1.0});
        CHECK(to_vec(g.var) == std::vector<double>{2.0, 3.0});
    }
    GaussianSequence twins{Tensor({1, 2, 1}, {1.5, 1.5}), Tensor({1, 2, 1}, {0.7, 0.7})};
    auto t = pool_distribution(twins, PoolMode::mean_pool);
    CHECK(t.mu.item() == 1.5);
    CHECK(t.var.item() == doctest::Approx(0.7).epsilon(1e-15));

    GaussianSequence two{Tensor({1, 2, 1}, {0.0, 2.0}), Tensor({1, 2, 1}, {1.0, 3.0})};
    auto m = pool_distribution(two, PoolMode::mean_pool);
    CHECK(m.mu.item() == 1.0);
    CHECK(m.var.item() == 2.0);
    auto c = pool_distribution(two, PoolMode::class_token);
    CHECK(c.mu.item() == 0.0);
    CHECK(c.var.item() == 1.0);

    auto patches = patch_tokens(two);
    CHECK(patches.mu.shape() == Shape{1, 1, 1});
    CHECK(patches.mu.item() == 2.0);
    CHECK_THROWS_AS(parse_pool_mode("max"), ConfigError);
}
