#include "swt/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>

#include "swt/errors.hpp"
#include "swt/ops.hpp"

namespace swt::train {

using model::ModelState;

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::pretrain: return "pretrain";
        case Phase::finetune: return "finetune";
        case Phase::linear_probe: return "linear_probe";
    }
    return "?";
}

Phase parse_phase(std::string_view name) {
    if (name == "pretrain") return Phase::pretrain;
    if (name == "finetune") return Phase::finetune;
    if (name == "linear_probe") return Phase::linear_probe;
    throw ConfigError("unknown phase '" + std::string(name) + "'");
}

void TrainConfig::validate(const model::ModelConfig& model) const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(lr >= 0.0)) fail("lr must be nonnegative");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) fail("warmup_fraction must lie in [0, 1]");
    if (!(clip_norm >= 0.0)) fail("clip_norm must be nonnegative");
    if (!(lambda >= 0.0) || !(lambda1 >= 0.0) || !(lambda2 >= 0.0)) fail("lambda coefficients must be nonnegative");
    if (!(smooth_l1_beta > 0.0)) fail("smooth_l1_beta must be positive");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
    if (target_top_k == 0 || target_top_k > model.depth) {
        fail("target_top_k " + std::to_string(target_top_k) + " must lie in [1, depth = " +
             std::to_string(model.depth) + "]");
    }
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in [0, 1)");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) fail("label_fraction must lie in (0, 1]");
    augment_policy.validate();
    model.validate();
}

// ---- optimizer -----------------------------------------------------------

Schedule Schedule::make(double peak, std::size_t total_steps, double warmup_fraction) {
    Schedule s;
    s.peak = peak;
    s.total = std::max<std::size_t>(total_steps, 1);
    s.warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(s.total)));
    s.warmup = std::min(s.warmup, s.total);
    return s;
}

double Schedule::at(std::size_t step) const {
    if (step <= warmup && warmup > 0) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total) return 0.0;
    const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(const TrainConfig& config, Schedule schedule) : config_(config), schedule_(schedule) {}

double AdamW::step(ParamStore& params, const std::function<bool(const std::string&)>& trainable) {
    if (m_.empty()) {
        for (const auto& [name, t] : params) {
            m_.emplace_back(t.numel(), 0.0);
            v_.emplace_back(t.numel(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ContractError("AdamW: parameter set changed between steps");
    ++step_;
    const double lr = schedule_.at(step_);

    double sq = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad() || !trainable(name)) continue;
        for (double g : t.grad()) sq += g * g;
    }
    last_norm_ = std::sqrt(sq);
    const double clip =
        config_.clip_norm > 0.0 && last_norm_ > config_.clip_norm ? config_.clip_norm / last_norm_ : 1.0;

    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    std::size_t idx = 0;
    for (auto& [name, t] : params) {
        auto& m = m_[idx];
        auto& v = v_[idx];
        ++idx;
        if (!t.has_grad() || !trainable(name)) continue;
        const bool decay = name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
        auto w = t.mutable_data();
        auto g = t.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
            if (decay) w[i] -= lr * config_.weight_decay * w[i];
            w[i] -= lr * update;
        }
    }
    return lr;
}

bool is_trainable(Phase phase, const std::string& name) {
    const bool head = name.rfind("head", 0) == 0;
    const bool pretrain_head = name.rfind("pretrain.", 0) == 0;
    switch (phase) {
        case Phase::pretrain: return !head;
        case Phase::finetune: return !pretrain_head;
        case Phase::linear_probe: return head;
    }
    return false;
}

// ---- batches and losses --------------------------------------------------

BatchRngs::BatchRngs(std::uint64_t seed)
    : augment(seed, Stream::augment), mask(seed, Stream::mask), negatives(seed, Stream::negatives) {}

Batch make_batch(const data::ImageDataset& dataset, std::span<const std::size_t> indices,
                 const model::ModelConfig& model, const TrainConfig& config, BatchRngs& rngs) {
    if (indices.empty()) throw ContractError("make_batch: empty batch");
    std::vector<data::Image> clean, view;
    Batch b;
    for (std::size_t i : indices) {
        clean.push_back(dataset.images.at(i));
        b.labels.push_back(dataset.labels.at(i));
    }
    if (config.augment && config.phase != Phase::linear_probe) {
        for (const auto& im : clean) view.push_back(data::augment(im, config.augment_policy, rngs.augment));
    }
    b.clean_tokens = model::patchify_batch(clean, model.patch, dataset.stats);
    b.tokens = view.empty() ? b.clean_tokens : model::patchify_batch(view, model.patch, dataset.stats);
    if (config.phase == Phase::pretrain) {
        for (std::size_t i = 0; i < indices.size(); ++i) {
            b.masks.push_back(data::random_mask(model.tokens(), config.mask_ratio, rngs.mask));
        }
    } else {
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::vector<int> others;
            for (std::size_t j = 0; j < indices.size(); ++j)
                if (b.labels[j] != b.labels[i]) others.push_back(static_cast<int>(j));
            b.negatives.push_back(others.empty() ? -1 : others[rngs.negatives.below(others.size())]);
        }
    }
    return b;
}

namespace {

using objectives::GaussianSequence;

GaussianSequence rows(const GaussianSequence& g, std::span<const std::size_t> r) {
    return {gather_rows(g.mu, r), gather_rows(g.var, r)};
}

LossParts pretrain_parts(const ModelState& st, const Batch& b, const TrainConfig& cfg) {
    auto teacher = model::forward(st, b.tokens, {}, model::Mode::teacher);
    Tensor target = objectives::data2vec_target(teacher.block_mu, cfg.target_top_k);
    auto student = model::forward(st, b.tokens, b.masks, model::Mode::student);
    Tensor pred = add_trailing(matmul(student.output.mu, st.student.get("pretrain.w")), st.student.get("pretrain.b"));
    auto positive = model::to_gaussian(model::embed(b.tokens, st.student));
    auto parts = objectives::pretrain_loss(pred, target, b.masks, model::to_gaussian(student.output), positive,
                                           cfg.lambda, cfg.smooth_l1_beta);
    return {parts.total, parts.reconstruction.item(), parts.regularizer.item(), 0.0};
}

LossParts finetune_parts(const ModelState& st, const Batch& b, const TrainConfig& cfg) {
    const bool probe = cfg.phase == Phase::linear_probe;
    model::ForwardResult out;
    GaussianSequence embedded;
    {
        std::optional<NoGradGuard> frozen;
        if (probe) frozen.emplace();
        out = model::forward(st.config, st.student, b.tokens);
        embedded = model::to_gaussian(model::embed(b.clean_tokens, st.student));
    }
    Tensor logits = model::classify(st.config, st.student, out.output);

    objectives::ContrastivePairs pairs;
    std::vector<std::size_t> anchors, negs;
    for (std::size_t i = 0; i < b.negatives.size(); ++i) {
        if (b.negatives[i] < 0) continue;
        anchors.push_back(i);
        negs.push_back(static_cast<std::size_t>(b.negatives[i]));
    }
    if (!anchors.empty()) {
        auto pooled = objectives::pool_distribution(model::to_gaussian(out.output), cfg.pooling);
        auto fz = objectives::pool_distribution(objectives::patch_tokens(embedded), objectives::PoolMode::mean_pool);
        pairs = {rows(pooled, anchors), rows(fz, anchors), rows(fz, negs)};
    }
    auto parts = objectives::finetune_loss(logits, b.labels, pairs, cfg.lambda1, cfg.lambda2, cfg.sign_mode);
    const double sign = cfg.sign_mode == objectives::SignMode::paper_literal ? -1.0 : 1.0;
    return {parts.total, parts.ce.item(), sign * cfg.lambda1 * parts.l1.item(), cfg.lambda2 * parts.l2.item()};
}

}  // namespace

LossParts compute_loss(const ModelState& state, const Batch& batch, const TrainConfig& config) {
    return config.phase == Phase::pretrain ? pretrain_parts(state, batch, config)
                                           : finetune_parts(state, batch, config);
}

StepResult train_step(ModelState& state, AdamW& optimizer, const Batch& batch, const TrainConfig& config) {
    const std::size_t step = optimizer.steps() + 1;
    const auto where = [&] { return "step " + std::to_string(step) + " (" + std::string(to_string(config.phase)) + ")"; };
    StepResult r;
    try {
        r.loss = compute_loss(state, batch, config);
    } catch (const NumericError& e) {
        throw NumericError(where() + ": non-finite value while computing the loss: " + e.what());
    }
    const std::pair<const char*, double> parts[] = {
        {"loss_total", r.loss.total.item()}, {"loss_main", r.loss.main}, {"loss_reg1", r.loss.reg1},
        {"loss_reg2", r.loss.reg2}};
    for (auto [name, v] : parts) {
        if (!std::isfinite(v)) throw NumericError(where() + ": " + name + " is not finite");
    }
    state.student.zero_grad();
    try {
        r.loss.total.backward();
    } catch (const NumericError& e) {
        throw NumericError(where() + ": non-finite gradient: " + e.what());
    }
    r.lr = optimizer.step(state.student, [&](const std::string& n) { return is_trainable(config.phase, n); });
    state.student.zero_grad();
    if (config.phase == Phase::pretrain) model::ema_update(state.teacher, state.student, config.ema_decay);
    return r;
}

// ---- loops and harnesses -------------------------------------------------

std::string format_log_row(const LogRow& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f", r.step,
                  std::string(to_string(r.phase)).c_str(), r.total, r.main, r.reg1, r.reg2, r.lr, r.seconds);
    return buf;
}

std::vector<std::size_t> subsample_indices(const data::ImageDataset& dataset, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
    std::vector<std::size_t> all(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    if (fraction == 1.0) return all;
    Rng rng(seed, Stream::subsample);
    std::vector<std::uint8_t> keep(dataset.size(), 0);
    for (std::size_t c = 0; c < dataset.classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (dataset.labels[i] == static_cast<int>(c)) members.push_back(i);
        const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size())));
        if (take == 0) throw ConfigError("label subsample leaves class " + std::to_string(c) + " empty");
        rng.shuffle(members);
        for (std::size_t k = 0; k < take; ++k) keep[members[k]] = 1;
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) out.push_back(i);
    return out;
}

data::ImageDataset subsample_labels(const data::ImageDataset& dataset, double fraction, std::uint64_t seed) {
    auto idx = subsample_indices(dataset, fraction, seed);
    return dataset.subset(idx);
}

RunSummary run(ModelState& state, const data::ImageDataset& dataset, const TrainConfig& config,
               const RunHooks& hooks) {
    config.validate(state.config);
    dataset.validate(state.config.patch);
    if (dataset.size() == 0) throw ConfigError("training set is empty");
    if (config.phase != Phase::pretrain && dataset.classes > state.config.classes) {
        throw ConfigError("dataset has " + std::to_string(dataset.classes) + " classes, model head has " +
                          std::to_string(state.config.classes));
    }
    const data::ImageDataset train =
        config.phase == Phase::pretrain ? dataset : subsample_labels(dataset, config.label_fraction, config.seed);
    state.ema_decay = config.ema_decay;

    const std::size_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    AdamW opt(config, Schedule::make(config.lr, per_epoch * config.epochs, config.warmup_fraction));
    Rng order_rng(config.seed, Stream::shuffle);
    BatchRngs rngs(config.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    RunSummary summary;
    summary.samples = train.size();
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            Batch b = make_batch(train, std::span(order).subspan(start, end - start), state.config, config, rngs);
            StepResult r = train_step(state, opt, b, config);
            LogRow row{opt.steps(), config.phase, r.loss.total.item(), r.loss.main, r.loss.reg1, r.loss.reg2, r.lr,
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
            summary.log.push_back(row);
            if (hooks.on_step) hooks.on_step(row);
        }
        if (hooks.on_epoch_end) hooks.on_epoch_end(epoch);
    }
    summary.steps = opt.steps();
    return summary;
}

std::vector<double> overfit_probe(const model::ModelConfig& model, const TrainConfig& config, std::size_t steps) {
    std::vector<double> losses;
    if (steps == 0) return losses;
    TrainConfig cfg = config;
    cfg.phase = Phase::pretrain;
    cfg.augment = false;
    cfg.validate(model);
    const std::size_t k = std::min<std::size_t>(model.classes, 4);
    auto ds = data::synth_blobs(k, (8 + k - 1) / k, model.image_size, cfg.seed);
    std::vector<std::size_t> idx(8);
    for (std::size_t i = 0; i < 8; ++i) idx[i] = i;
    BatchRngs rngs(cfg.seed);
    Batch batch = make_batch(ds, idx, model, cfg, rngs);
    ModelState state = ModelState::create(model, cfg.seed, cfg.ema_decay);
    AdamW opt(cfg, Schedule::make(cfg.lr, steps, cfg.warmup_fraction));
    for (std::size_t s = 0; s < steps; ++s) losses.push_back(train_step(state, opt, batch, cfg).loss.total.item());
    return losses;
}

GradCheckResult loss_grad_check(const model::ModelConfig& model, const TrainConfig& config, std::size_t batch,
                                double* min_variance, double h) {
    TrainConfig cfg = config;
    cfg.augment = false;
    cfg.validate(model);
    const std::size_t k = std::min<std::size_t>(model.classes, 3);
    auto ds = data::synth_blobs(k, (batch + k - 1) / k, model.image_size, cfg.seed);
    std::vector<std::size_t> idx(batch);
    for (std::size_t i = 0; i < batch; ++i) idx[i] = i;
    BatchRngs rngs(cfg.seed);
    const Batch b = make_batch(ds, idx, model, cfg, rngs);
    ModelState state = ModelState::create(model, cfg.seed, cfg.ema_decay);
    if (min_variance) {
        NoGradGuard guard;
        double lo = std::numeric_limits<double>::infinity();
        auto out = model::forward(state, b.tokens, b.masks, model::Mode::student);
        for (const auto* seq : {&out.embedded, &out.output}) {
            auto g = model::to_gaussian(*seq);
            for (double v : g.var.data()) lo = std::min(lo, v);
        }
        *min_variance = lo;
    }
    std::vector<Tensor> params;
    for (auto& [name, t] : state.student) params.push_back(t);
    return grad_check([&] { return compute_loss(state, b, cfg).total; }, params, h);
}

metrics::PredictionSet predict_images(const ModelState& state, std::span<const data::Image> images,
                                      const data::ChannelStats& stats, std::size_t batch_size) {
    NoGradGuard guard;
    metrics::PredictionSet p;
    p.classes = state.config.classes;
    p.probs.reserve(images.size() * p.classes);
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t end = std::min(images.size(), start + batch_size);
        Tensor tokens = model::patchify_batch(images.subspan(start, end - start), state.config.patch, stats);
        auto out = model::forward(state.config, state.student, tokens);
        Tensor probs = softmax(model::classify(state.config, state.student, out.output), 1);
        p.probs.insert(p.probs.end(), probs.data().begin(), probs.data().end());
    }
    return p;
}

metrics::PredictionSet predict(const ModelState& state, const data::ImageDataset& dataset, std::size_t batch_size) {
    auto p = predict_images(state, dataset.images, dataset.stats, batch_size);
    p.labels = dataset.labels;
    return p;
}

}  // namespace swt::train
