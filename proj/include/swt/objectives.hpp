#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "swt/data.hpp"
#include "swt/model.hpp"
#include "swt/tensor.hpp"

namespace swt::objectives {

using model::GaussianSequence;

inline constexpr double kTargetNormEps = 1e-5;

// Mean of the last K block mean-streams, each layer-normalized per token
// (no affine). Detached. ConfigError when K is 0 or exceeds the depth.
Tensor data2vec_target(std::span<const Tensor> block_mu, std::size_t top_k);

// Sequences are [B, L+1, D] with the class slot at 0; mask index i refers to
// sequence row i + 1. Averages the smoothed-L1 residual over masked rows and
// features. ContractError when no row is masked.
Tensor smoothed_l1(const Tensor& pred, const Tensor& target, double beta, std::span<const data::MaskSpec> masks);

// lambda * softplus(w2) == -lambda * log sigmoid(-w2)
Tensor pretrain_regularizer(const Tensor& w2_mean, double lambda);

struct PretrainLossParts {
    Tensor reconstruction;
    Tensor w2_mean;      // mean W2^2 over masked rows
    Tensor regularizer;  // lambda * softplus(w2_mean)
    Tensor total;
    double lambda = 0.0;
};

// `student_out` and `positive` are full sequences; both are read at the
// masked rows only.
PretrainLossParts pretrain_loss(const Tensor& pred, const Tensor& target, std::span<const data::MaskSpec> masks,
                                const GaussianSequence& student_out, const GaussianSequence& positive,
                                double lambda, double beta = 1.0);

// Rows are pairs: every tensor is [N, D].
struct ContrastivePairs {
    GaussianSequence anchor;
    GaussianSequence positive;
    GaussianSequence negative;

    std::size_t size() const { return anchor.mu.defined() ? anchor.mu.dim(0) : 0; }
};

// log sigmoid(W2(a, p) - W2(a, n)), per pair.
Tensor l1_reg(const ContrastivePairs& pairs);
// max(0, W2(a, p) - W2(p, n)), per pair.
Tensor l2_reg(const ContrastivePairs& pairs);

enum class SignMode { corrected, paper_literal };
std::string_view to_string(SignMode mode);
SignMode parse_sign_mode(std::string_view name);

/// paper_literal: total = ce - l1 * mean(log sigmoid(d+ - d-)) + l2 * mean(hinge)
/// corrected:     total = ce + l1 * mean(softplus(d+ - d-))  + l2 * mean(hinge)
/// `l1` holds the mean that the mode multiplies by lambda1. With no pairs
/// both regularizer terms are zero.
struct FinetuneLossParts {
    Tensor ce;
    Tensor l1;
    Tensor l2;
    Tensor total;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    SignMode mode = SignMode::corrected;
};

FinetuneLossParts finetune_loss(const Tensor& logits, std::span<const int> labels, const ContrastivePairs& pairs,
                                double lambda1, double lambda2, SignMode mode);

enum class PoolMode { class_token, mean_pool };
std::string_view to_string(PoolMode mode);
PoolMode parse_pool_mode(std::string_view name);

// [B, L', D] -> [B, D]
GaussianSequence pool_distribution(const GaussianSequence& seq, PoolMode mode);
// Drops the class slot: [B, L+1, D] -> [B, L, D].
GaussianSequence patch_tokens(const GaussianSequence& seq);

}  // namespace swt::objectives
