#include "swt/objectives.hpp"

#include "swt/errors.hpp"
#include "swt/ops.hpp"
#include "swt/wasserstein.hpp"

namespace swt::objectives {

namespace {

// Flat row ids (into [B*(L+1), D]) of every masked position.
std::vector<std::size_t> masked_rows(const Tensor& seq, std::span<const data::MaskSpec> masks) {
    if (seq.rank() != 3) throw DimensionError("expected [B, L+1, D], got " + shape_str(seq.shape()));
    const std::size_t B = seq.dim(0), L1 = seq.dim(1);
    if (masks.size() != B) {
        throw ContractError("expected " + std::to_string(B) + " masks, got " + std::to_string(masks.size()));
    }
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i : masks[b].indices) {
            if (i + 1 >= L1) throw ContractError("mask index " + std::to_string(i) + " out of range");
            rows.push_back(b * L1 + i + 1);
        }
    }
    if (rows.empty()) throw ContractError("mask selects no tokens");
    return rows;
}

Tensor rows_of(const Tensor& seq, std::span<const std::size_t> rows) {
    const std::size_t d = seq.shape().back();
    return gather_rows(reshape(seq, {seq.numel() / d, d}), rows);
}

Tensor w2(const GaussianSequence& a, const GaussianSequence& b) {
    return wasserstein::w2sq_diag(a.mu, a.var, b.mu, b.var);
}

}  // namespace

Tensor data2vec_target(std::span<const Tensor> block_mu, std::size_t top_k) {
    if (top_k == 0 || top_k > block_mu.size()) {
        throw ConfigError("top_k " + std::to_string(top_k) + " must lie in [1, " + std::to_string(block_mu.size()) +
                          "]");
    }
    NoGradGuard guard;
    Tensor acc;
    for (std::size_t i = block_mu.size() - top_k; i < block_mu.size(); ++i) {
        Tensor n = layer_norm(block_mu[i].detach(), kTargetNormEps);
        acc = acc.defined() ? add(acc, n) : n;
    }
    return scale(acc, 1.0 / static_cast<double>(top_k)).detach();
}

Tensor smoothed_l1(const Tensor& pred, const Tensor& target, double beta, std::span<const data::MaskSpec> masks) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("smoothed_l1: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    auto rows = masked_rows(pred, masks);
    return mean(smooth_l1(sub(rows_of(pred, rows), rows_of(target, rows)), beta));
}

Tensor pretrain_regularizer(const Tensor& w2_mean, double lambda) {
    return scale(softplus(w2_mean), lambda);
}

PretrainLossParts pretrain_loss(const Tensor& pred, const Tensor& target, std::span<const data::MaskSpec> masks,
                                const GaussianSequence& student_out, const GaussianSequence& positive,
                                double lambda, double beta) {
    if (student_out.mu.shape() != positive.mu.shape()) {
        throw DimensionError("pretrain_loss: student " + shape_str(student_out.mu.shape()) + " vs positive " +
                             shape_str(positive.mu.shape()));
    }
    PretrainLossParts parts;
    parts.lambda = lambda;
    parts.reconstruction = smoothed_l1(pred, target, beta, masks);
    auto rows = masked_rows(student_out.mu, masks);
    GaussianSequence s{rows_of(student_out.mu, rows), rows_of(student_out.var, rows)};
    GaussianSequence p{rows_of(positive.mu, rows), rows_of(positive.var, rows)};
    parts.w2_mean = mean(w2(s, p));
    parts.regularizer = pretrain_regularizer(parts.w2_mean, lambda);
    parts.total = add(parts.reconstruction, parts.regularizer);
    return parts;
}

Tensor l1_reg(const ContrastivePairs& pairs) {
    return log_sigmoid(sub(w2(pairs.anchor, pairs.positive), w2(pairs.anchor, pairs.negative)));
}

Tensor l2_reg(const ContrastivePairs& pairs) {
    return relu(sub(w2(pairs.anchor, pairs.positive), w2(pairs.positive, pairs.negative)));
}

std::string_view to_string(SignMode mode) {
    return mode == SignMode::corrected ? "corrected" : "paper_literal";
}

SignMode parse_sign_mode(std::string_view name) {
    if (name == "corrected") return SignMode::corrected;
    if (name == "paper_literal") return SignMode::paper_literal;
    throw ConfigError("unknown sign mode '" + std::string(name) + "' (expected corrected or paper_literal)");
}

FinetuneLossParts finetune_loss(const Tensor& logits, std::span<const int> labels, const ContrastivePairs& pairs,
                                double lambda1, double lambda2, SignMode mode) {
    FinetuneLossParts parts;
    parts.lambda1 = lambda1;
    parts.lambda2 = lambda2;
    parts.mode = mode;
    parts.ce = cross_entropy(logits, labels);
    if (pairs.size() == 0) {
        parts.l1 = Tensor::scalar(0.0);
        parts.l2 = Tensor::scalar(0.0);
        parts.total = parts.ce;
        return parts;
    }
    Tensor dp = w2(pairs.anchor, pairs.positive);
    Tensor dn = w2(pairs.anchor, pairs.negative);
    parts.l2 = mean(l2_reg(pairs));
    if (mode == SignMode::paper_literal) {
        parts.l1 = mean(log_sigmoid(sub(dp, dn)));
        parts.total = add(sub(parts.ce, scale(parts.l1, lambda1)), scale(parts.l2, lambda2));
    } else {
        parts.l1 = mean(softplus(sub(dp, dn)));
        parts.total = add(add(parts.ce, scale(parts.l1, lambda1)), scale(parts.l2, lambda2));
    }
    return parts;
}

std::string_view to_string(PoolMode mode) {
    return mode == PoolMode::class_token ? "class_token" : "mean_pool";
}

PoolMode parse_pool_mode(std::string_view name) {
    if (name == "class_token") return PoolMode::class_token;
    if (name == "mean_pool") return PoolMode::mean_pool;
    throw ConfigError("unknown pooling '" + std::string(name) + "' (expected class_token or mean_pool)");
}

GaussianSequence pool_distribution(const GaussianSequence& seq, PoolMode mode) {
    if (seq.mu.rank() != 3 || seq.mu.shape() != seq.var.shape()) {
        throw DimensionError("pool_distribution: expected matching [B, L, D], got " + shape_str(seq.mu.shape()));
    }
    const std::size_t B = seq.mu.dim(0), L = seq.mu.dim(1);
    if (L == 0) throw ContractError("pool_distribution: empty sequence");
    if (mode == PoolMode::class_token) {
        std::vector<std::size_t> rows(B);
        for (std::size_t b = 0; b < B; ++b) rows[b] = b * L;
        return {rows_of(seq.mu, rows), rows_of(seq.var, rows)};
    }
    return {mean_last(permute(seq.mu, {0, 2, 1})), mean_last(permute(seq.var, {0, 2, 1}))};
}

GaussianSequence patch_tokens(const GaussianSequence& seq) {
    const std::size_t B = seq.mu.dim(0), L1 = seq.mu.dim(1), D = seq.mu.dim(2);
    if (L1 < 2) throw ContractError("patch_tokens: sequence has no patch tokens");
    std::vector<std::size_t> rows;
    rows.reserve(B * (L1 - 1));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 1; i < L1; ++i) rows.push_back(b * L1 + i);
    return {reshape(rows_of(seq.mu, rows), {B, L1 - 1, D}), reshape(rows_of(seq.var, rows), {B, L1 - 1, D})};
}

}  // namespace swt::objectives
