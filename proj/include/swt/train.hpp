#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swt/data.hpp"
#include "swt/grad_check.hpp"
#include "swt/metrics.hpp"
#include "swt/model.hpp"
#include "swt/objectives.hpp"
#include "swt/params.hpp"

namespace swt::train {

enum class Phase { pretrain, finetune, linear_probe };
std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view name);

struct TrainConfig {
    Phase phase = Phase::pretrain;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double warmup_fraction = 0.1;
    double clip_norm = 1.0;  // 0 disables clipping

    double lambda = 1e-5;
    double lambda1 = 1e-4;
    double lambda2 = 1e-4;
    double smooth_l1_beta = 1.0;
    double mask_ratio = 0.6;
    std::size_t target_top_k = 2;
    double ema_decay = 0.999;

    objectives::SignMode sign_mode = objectives::SignMode::corrected;
    objectives::PoolMode pooling = objectives::PoolMode::class_token;
    bool augment = true;
    data::AugmentPolicy augment_policy{};

    std::uint64_t seed = 0;
    double label_fraction = 1.0;

    void validate(const model::ModelConfig& model) const;  // ConfigError
    bool operator==(const TrainConfig&) const = default;
};

// ---- optimizer -----------------------------------------------------------

// Linear warmup from 0 over `warmup` steps, then cosine decay to 0 at `total`.
struct Schedule {
    double peak = 1e-3;
    std::size_t warmup = 0;
    std::size_t total = 1;

    static Schedule make(double peak, std::size_t total_steps, double warmup_fraction);
    double at(std::size_t step) const;
};

// Decoupled weight decay on matrices (names ending in ".w"); only parameters
// selected by the filter and holding a gradient are touched.
class AdamW {
public:
    AdamW(const TrainConfig& config, Schedule schedule);

    // Clips, applies one update, and returns the learning rate used.
    double step(ParamStore& params, const std::function<bool(const std::string&)>& trainable);
    std::size_t steps() const { return step_; }
    const Schedule& schedule() const { return schedule_; }
    // Global L2 norm of the gradients seen by the last step, before clipping.
    double last_grad_norm() const { return last_norm_; }

private:
    TrainConfig config_;
    Schedule schedule_;
    std::size_t step_ = 0;
    double last_norm_ = 0.0;
    std::vector<std::vector<double>> m_, v_;
};

bool is_trainable(Phase phase, const std::string& name);

// ---- batches and losses --------------------------------------------------

struct Batch {
    Tensor tokens;        // [B, L, K], the (possibly augmented) view
    Tensor clean_tokens;  // [B, L, K], the unaugmented view
    std::vector<int> labels;
    std::vector<data::MaskSpec> masks;  // pretrain only
    std::vector<int> negatives;         // per anchor: batch index of another class, or -1
};

struct BatchRngs {
    Rng augment;
    Rng mask;
    Rng negatives;

    explicit BatchRngs(std::uint64_t seed);
};

Batch make_batch(const data::ImageDataset& dataset, std::span<const std::size_t> indices,
                 const model::ModelConfig& model, const TrainConfig& config, BatchRngs& rngs);

// Weighted contributions: total == main + reg1 + reg2 (up to rounding).
struct LossParts {
    Tensor total;
    double main = 0.0;
    double reg1 = 0.0;
    double reg2 = 0.0;
};

LossParts compute_loss(const model::ModelState& state, const Batch& batch, const TrainConfig& config);

struct StepResult {
    LossParts loss;
    double lr = 0.0;
};

// Forward, backward, one optimizer update, then EMA (pretrain only).
// NumericError names the step and the failing part.
StepResult train_step(model::ModelState& state, AdamW& optimizer, const Batch& batch, const TrainConfig& config);

// ---- loops and harnesses -------------------------------------------------

struct LogRow {
    std::size_t step = 0;
    Phase phase = Phase::pretrain;
    double total = 0.0, main = 0.0, reg1 = 0.0, reg2 = 0.0, lr = 0.0, seconds = 0.0;
};

inline constexpr const char* kLogHeader = "step,phase,loss_total,loss_main,loss_reg1,loss_reg2,lr,seconds";
std::string format_log_row(const LogRow& row);

struct RunHooks {
    std::function<void(const LogRow&)> on_step;
    std::function<void(std::size_t epoch)> on_epoch_end;  // epoch is 1-based
};

struct RunSummary {
    std::vector<LogRow> log;
    std::size_t samples = 0;
    std::size_t steps = 0;
};

// Trains for config.epochs over the dataset (after label subsampling).
RunSummary run(model::ModelState& state, const data::ImageDataset& dataset, const TrainConfig& config,
               const RunHooks& hooks = {});

// Per-class stratified sample of ceil(fraction * class size) items, kept in
// dataset order.
data::ImageDataset subsample_labels(const data::ImageDataset& dataset, double fraction, std::uint64_t seed);
std::vector<std::size_t> subsample_indices(const data::ImageDataset& dataset, double fraction, std::uint64_t seed);

// Pretrain steps on one fixed batch of 8 synthetic images (fixed masks, no
// augmentation). Returns the total loss before each step.
std::vector<double> overfit_probe(const model::ModelConfig& model, const TrainConfig& config, std::size_t steps);

// Finite-difference check of compute_loss against every student parameter on a
// fixed unaugmented batch of synthetic images. `min_variance`, when given,
// receives the smallest variance reaching the embedding or encoder output.
GradCheckResult loss_grad_check(const model::ModelConfig& model, const TrainConfig& config, std::size_t batch,
                                double* min_variance = nullptr, double h = 1e-5);

// Softmax class probabilities from the student, no graph.
metrics::PredictionSet predict(const model::ModelState& state, const data::ImageDataset& dataset,
                               std::size_t batch_size = 128);
metrics::PredictionSet predict_images(const model::ModelState& state, std::span<const data::Image> images,
                                      const data::ChannelStats& stats, std::size_t batch_size = 128);

}  // namespace swt::train
