#include "swt/model.hpp"

#include <cmath>

#include "swt/errors.hpp"
#include "swt/ops.hpp"
#include "swt/rng.hpp"
#include "swt/wasserstein.hpp"

namespace swt::model {

using wasserstein::kVarianceFloor;

std::size_t ModelConfig::tokens() const {
    return (image_size / patch) * (image_size / patch);
}

std::size_t ModelConfig::patch_dim() const { return patch * patch * channels; }

void ModelConfig::validate() const {
    if (patch == 0 || image_size % patch != 0) {
        throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch " +
                          std::to_string(patch));
    }
    if (channels == 0 || dim == 0 || heads == 0 || depth == 0 || classes == 0 || ffn_mult == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (dim % heads != 0) {
        throw ConfigError("heads " + std::to_string(heads) + " does not divide dim " + std::to_string(dim));
    }
    if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

Tensor patchify(const data::Image& image, std::size_t patch, const data::ChannelStats& stats) {
    if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
        throw ConfigError("patchify: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          " image is not divisible by patch " + std::to_string(patch));
    }
    if (image.channels > stats.mean.size()) throw ConfigError("patchify: at most 3 channels are supported");
    const std::size_t ph = image.height / patch, pw = image.width / patch;
    const std::size_t width = patch * patch * image.channels;
    std::vector<double> out(ph * pw * width);
    std::size_t o = 0;
    for (std::size_t py = 0; py < ph; ++py) {
        for (std::size_t px = 0; px < pw; ++px) {
            for (std::size_t c = 0; c < image.channels; ++c) {
                const double m = stats.mean[c], s = stats.std[c];
                for (std::size_t y = 0; y < patch; ++y) {
                    for (std::size_t x = 0; x < patch; ++x) {
                        double v = image.at(c, py * patch + y, px * patch + x) / 255.0;
                        out[o++] = (v - m) / s;
                    }
                }
            }
        }
    }
    return Tensor({ph * pw, width}, std::move(out));
}

Tensor patchify_batch(std::span<const data::Image> images, std::size_t patch, const data::ChannelStats& stats) {
    if (images.empty()) throw ContractError("patchify_batch: empty batch");
    std::vector<double> out;
    Shape one;
    for (const auto& im : images) {
        Tensor t = patchify(im, patch, stats);
        if (one.empty()) {
            one = t.shape();
            out.reserve(images.size() * t.numel());
        } else if (t.shape() != one) {
            throw DimensionError("patchify_batch: images differ in size");
        }
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return Tensor({images.size(), one[0], one[1]}, std::move(out));
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(v), true);
}

void add_norm(ParamStore& p, const std::string& name, std::size_t d) {
    p.add(name + ".scale", Tensor::full({d}, 1.0, true));
    p.add(name + ".shift", Tensor::zeros({d}, true));
}

void add_linear(ParamStore& p, const std::string& name, std::size_t in, std::size_t out, bool bias, double stddev,
                Rng& rng) {
    p.add(name + ".w", normal_tensor({in, out}, stddev, rng));
    if (bias) p.add(name + ".b", Tensor::zeros({out}, true));
}

Tensor affine_norm(const Tensor& x, const ParamStore& p, const std::string& name) {
    return add_trailing(mul_trailing(layer_norm(x), p.get(name + ".scale")), p.get(name + ".shift"));
}

Tensor linear(const Tensor& x, const ParamStore& p, const std::string& name) {
    Tensor y = matmul(x, p.get(name + ".w"));
    const std::string b = name + ".b";
    return p.contains(b) ? add_trailing(y, p.get(b)) : y;
}

Tensor ffn(const Tensor& x, const ParamStore& p, const std::string& name) {
    return linear(gelu(linear(x, p, name + ".fc1")), p, name + ".fc2");
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed, Stream::init);
    const double s = cfg.init_std;
    const std::size_t D = cfg.dim, K = cfg.patch_dim(), L1 = cfg.tokens() + 1, F = cfg.ffn_mult * cfg.dim;
    ParamStore p;
    add_linear(p, "embed.patch_mu", K, D, true, s, rng);
    add_linear(p, "embed.patch_sigma", K, D, true, s, rng);
    p.add("embed.pos_mu", normal_tensor({L1, D}, s, rng));
    p.add("embed.pos_sigma", normal_tensor({L1, D}, s, rng));
    p.add("embed.cls_mu", normal_tensor({D}, s, rng));
    p.add("embed.cls_sigma", normal_tensor({D}, s, rng));
    p.add("embed.mask_mu", normal_tensor({D}, s, rng));
    p.add("embed.mask_sigma", normal_tensor({D}, s, rng));
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        const std::string n = "block" + std::to_string(b);
        add_norm(p, n + ".norm1_mu", D);
        add_norm(p, n + ".norm1_sigma", D);
        add_linear(p, n + ".qkv_mu", D, 3 * D, false, s, rng);
        add_linear(p, n + ".qkv_sigma", D, 3 * D, false, s, rng);
        add_linear(p, n + ".out_mu", D, D, true, s, rng);
        add_linear(p, n + ".out_sigma", D, D, true, s, rng);
        add_norm(p, n + ".norm2_mu", D);
        add_norm(p, n + ".norm2_sigma", D);
        add_linear(p, n + ".ffn_mu.fc1", D, F, true, s, rng);
        add_linear(p, n + ".ffn_mu.fc2", F, D, true, s, rng);
        add_linear(p, n + ".ffn_sigma.fc1", D, F, true, s, rng);
        add_linear(p, n + ".ffn_sigma.fc2", F, D, true, s, rng);
    }
    add_norm(p, "head.norm", D);
    add_linear(p, "head", D, cfg.classes, true, s, rng);
    add_linear(p, "pretrain", D, D, true, s, rng);
    return p;
}

RawStochasticSequence embed(const Tensor& tokens, const ParamStore& params, std::span<const data::MaskSpec> masks) {
    Tensor t = tokens.rank() == 2 ? reshape(tokens, {1, tokens.dim(0), tokens.dim(1)}) : tokens;
    if (t.rank() != 3) throw DimensionError("embed: tokens must be [B, L, K], got " + shape_str(tokens.shape()));
    const Tensor& w = params.get("embed.patch_mu.w");
    if (t.dim(2) != w.dim(0)) {
        throw DimensionError("embed: token width " + std::to_string(t.dim(2)) + " does not match projection input " +
                             std::to_string(w.dim(0)));
    }
    const std::size_t B = t.dim(0), L = t.dim(1);
    if (params.get("embed.pos_mu").dim(0) != L + 1) {
        throw DimensionError("embed: " + std::to_string(L) + " tokens but positional table has " +
                             std::to_string(params.get("embed.pos_mu").dim(0)) + " rows");
    }
    Tensor mu = add_trailing(prepend_row(linear(t, params, "embed.patch_mu"), params.get("embed.cls_mu")),
                             params.get("embed.pos_mu"));
    Tensor sigma = add_trailing(prepend_row(linear(t, params, "embed.patch_sigma"), params.get("embed.cls_sigma")),
                                params.get("embed.pos_sigma"));
    if (!masks.empty()) {
        if (masks.size() != B) throw ContractError("embed: expected one mask per batch element");
        std::vector<std::uint8_t> flags(B * (L + 1), 0);
        bool any = false;
        for (std::size_t b = 0; b < B; ++b) {
            if (masks[b].token_count != L) {
                throw ContractError("embed: mask covers " + std::to_string(masks[b].token_count) + " tokens, input has " +
                                    std::to_string(L));
            }
            for (std::size_t i : masks[b].indices) {
                if (i >= L) throw ContractError("embed: mask index " + std::to_string(i) + " out of range");
                flags[b * (L + 1) + i + 1] = 1;
                any = true;
            }
        }
        if (any) {
            mu = replace_rows(mu, params.get("embed.mask_mu"), flags);
            sigma = replace_rows(sigma, params.get("embed.mask_sigma"), flags);
        }
    }
    return {mu, sigma};
}

GaussianSequence to_gaussian(const RawStochasticSequence& seq) {
    return {seq.mu, clamp_min(elu_plus_one(seq.sigma), kVarianceFloor, wasserstein::clamp_counter())};
}

StochasticQKV project_qkv(const RawStochasticSequence& seq, const ParamStore& params, const std::string& block,
                          const ModelConfig& cfg) {
    const std::size_t H = cfg.heads;
    Tensor mu = linear(seq.mu, params, block + ".qkv_mu");
    StochasticQKV out;
    out.heads = H;
    GaussianSequence* parts[3] = {&out.q, &out.k, &out.v};
    if (cfg.deterministic_attention) {
        for (std::size_t i = 0; i < 3; ++i) {
            parts[i]->mu = split_heads(mu, 3, i, H);
            parts[i]->var = Tensor::full(parts[i]->mu.shape(), 1.0);
        }
        return out;
    }
    Tensor var = clamp_min(elu_plus_one(linear(seq.sigma, params, block + ".qkv_sigma")), kVarianceFloor,
                           wasserstein::clamp_counter());
    for (std::size_t i = 0; i < 3; ++i) {
        parts[i]->mu = split_heads(mu, 3, i, H);
        parts[i]->var = split_heads(var, 3, i, H);
    }
    return out;
}

AttentionOutput wasserstein_attention(const StochasticQKV& qkv) {
    const double d = static_cast<double>(qkv.q.mu.dim(2));
    Tensor dist = wasserstein::pairwise_w2sq(qkv.q.mu, qkv.q.var, qkv.k.mu, qkv.k.var);
    Tensor scores = softmax(scale(dist, -1.0 / std::sqrt(d)), 2);
    Tensor mu = bmm(scores, qkv.v.mu);
    Tensor var = clamp_min(bmm(square(scores), qkv.v.var), kVarianceFloor, wasserstein::clamp_counter());
    return {mu, var, scores};
}

RawStochasticSequence encoder_block(const RawStochasticSequence& seq, const ParamStore& p, const std::string& n,
                                    const ModelConfig& cfg, Tensor* scores_out) {
    RawStochasticSequence normed{affine_norm(seq.mu, p, n + ".norm1_mu"), affine_norm(seq.sigma, p, n + ".norm1_sigma")};
    AttentionOutput att = wasserstein_attention(project_qkv(normed, p, n, cfg));
    if (scores_out) *scores_out = att.scores;
    Tensor mu = add(seq.mu, linear(merge_heads(att.mu, cfg.heads), p, n + ".out_mu"));
    Tensor sigma = add(seq.sigma, linear(merge_heads(att.var, cfg.heads), p, n + ".out_sigma"));
    mu = add(mu, ffn(affine_norm(mu, p, n + ".norm2_mu"), p, n + ".ffn_mu"));
    sigma = add(sigma, ffn(affine_norm(sigma, p, n + ".norm2_sigma"), p, n + ".ffn_sigma"));
    return {mu, sigma};
}

ForwardResult forward(const ModelConfig& cfg, const ParamStore& params, const Tensor& tokens,
                      std::span<const data::MaskSpec> masks, bool keep_scores) {
    ForwardResult r;
    r.embedded = embed(tokens, params, masks);
    RawStochasticSequence s = r.embedded;
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        Tensor scores;
        s = encoder_block(s, params, "block" + std::to_string(b), cfg, keep_scores ? &scores : nullptr);
        r.block_mu.push_back(s.mu);
        if (keep_scores) r.scores.push_back(scores);
    }
    r.output = s;
    return r;
}

Tensor classify(const ModelConfig&, const ParamStore& params, const RawStochasticSequence& output) {
    const std::size_t B = output.mu.dim(0), L1 = output.mu.dim(1), D = output.mu.dim(2);
    std::vector<std::size_t> rows(B);
    for (std::size_t b = 0; b < B; ++b) rows[b] = b * L1;
    Tensor cls = gather_rows(reshape(output.mu, {B * L1, D}), rows);
    return linear(affine_norm(cls, params, "head.norm"), params, "head");
}

ModelState ModelState::create(const ModelConfig& config, std::uint64_t seed, double ema_decay) {
    ModelState s;
    s.config = config;
    s.student = init_params(config, seed);
    s.teacher = s.student.deep_copy();
    s.teacher.set_requires_grad(false);
    s.ema_decay = ema_decay;
    return s;
}

ForwardResult forward(const ModelState& state, const Tensor& tokens, std::span<const data::MaskSpec> masks,
                      Mode mode) {
    if (mode == Mode::student) return forward(state.config, state.student, tokens, masks);
    NoGradGuard guard;
    return forward(state.config, state.teacher, tokens, {});
}

void ema_update(ParamStore& teacher, const ParamStore& student, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("ema decay must lie in [0, 1)");
    if (teacher.size() != student.size()) throw ContractError("ema_update: parameter counts differ");
    auto it = student.begin();
    for (auto& [name, t] : teacher) {
        const auto& [sname, s] = *it++;
        if (name != sname || t.shape() != s.shape()) {
            throw ContractError("ema_update: mismatch at '" + name + "' " + shape_str(t.shape()) + " vs '" + sname +
                                "' " + shape_str(s.shape()));
        }
        auto td = t.mutable_data();
        auto sd = s.data();
        for (std::size_t i = 0; i < td.size(); ++i) td[i] = decay * td[i] + (1.0 - decay) * sd[i];
    }
}

}  // namespace swt::model
