#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "swt/data.hpp"
#include "swt/params.hpp"
#include "swt/tensor.hpp"

namespace swt::model {

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t patch = 8;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t depth = 4;
    std::size_t classes = 10;
    std::size_t ffn_mult = 4;
    double init_std = 0.02;
    // Ablation: every QKV variance fixed at 1, so attention reduces to
    // softmax of negative squared mean distances.
    bool deterministic_attention = false;

    std::size_t tokens() const;     // L, patches per image
    std::size_t patch_dim() const;  // P * P * C
    std::size_t head_dim() const { return dim / heads; }
    void validate() const;  // ConfigError
    bool operator==(const ModelConfig&) const = default;
};

// Index 0 of both streams is the class token. Shapes [B, L+1, D].
struct RawStochasticSequence {
    Tensor mu;
    Tensor sigma;
};

// var >= floor everywhere.
struct GaussianSequence {
    Tensor mu;
    Tensor var;
};

// ---- embedding -----------------------------------------------------------

// [L, P*P*C]: patches in row-major patch order, each flattened channel-major
// then row-major, pixels scaled to [0, 1] then standardized per channel.
Tensor patchify(const data::Image& image, std::size_t patch, const data::ChannelStats& stats);
// [B, L, P*P*C]
Tensor patchify_batch(std::span<const data::Image> images, std::size_t patch, const data::ChannelStats& stats);

// Fresh parameters; seeded normal(0, init_std) weights, zero biases, unit
// normalization scales.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

// tokens [B, L, K] (or [L, K]): class token prepended, then positional tables
// added. With masks (one per batch element, or empty), masked patch
// positions are replaced by the mask token pair after the positional add.
RawStochasticSequence embed(const Tensor& tokens, const ParamStore& params,
                            std::span<const data::MaskSpec> masks = {});

// var = max(ELU(sigma) + 1, floor)
GaussianSequence to_gaussian(const RawStochasticSequence& seq);

// ---- encoder -------------------------------------------------------------

// Per-head Gaussians, each [B*H, L', d].
struct StochasticQKV {
    GaussianSequence q, k, v;
    std::size_t heads = 1;
};

struct AttentionOutput {
    Tensor mu;      // [B*H, L', d]
    Tensor var;     // [B*H, L', d]
    Tensor scores;  // [B*H, L', L'], rows sum to 1
};

// `block` is the parameter prefix, e.g. "block0".
StochasticQKV project_qkv(const RawStochasticSequence& seq, const ParamStore& params, const std::string& block,
                          const ModelConfig& config);
AttentionOutput wasserstein_attention(const StochasticQKV& qkv);

RawStochasticSequence encoder_block(const RawStochasticSequence& seq, const ParamStore& params,
                                    const std::string& block, const ModelConfig& config,
                                    Tensor* scores_out = nullptr);

struct ForwardResult {
    RawStochasticSequence embedded;  // encoder input (after masking)
    RawStochasticSequence output;
    std::vector<Tensor> block_mu;    // mean stream after each block
    std::vector<Tensor> scores;      // per block, filled when requested
};

ForwardResult forward(const ModelConfig& config, const ParamStore& params, const Tensor& tokens,
                      std::span<const data::MaskSpec> masks = {}, bool keep_scores = false);

// Class-token readout: layer norm with affine, then linear. [B, classes].
Tensor classify(const ModelConfig& config, const ParamStore& params, const RawStochasticSequence& output);

struct ModelState {
    ModelConfig config;
    ParamStore student;
    ParamStore teacher;  // never requires grad
    double ema_decay = 0.999;

    static ModelState create(const ModelConfig& config, std::uint64_t seed, double ema_decay = 0.999);
};

enum class Mode { student, teacher };

// Teacher mode runs without graph recording, with teacher parameters, and
// ignores masks.
ForwardResult forward(const ModelState& state, const Tensor& tokens, std::span<const data::MaskSpec> masks,
                      Mode mode);

// teacher <- decay * teacher + (1 - decay) * student. decay in [0, 1).
void ema_update(ParamStore& teacher, const ParamStore& student, double decay);

}  // namespace swt::model
