#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace swt::metrics {

// Row-major N x C probabilities; labels may be empty for unlabeled sets.
struct PredictionSet {
    std::size_t classes = 0;
    std::vector<double> probs;
    std::vector<int> labels;

    std::size_t size() const { return classes == 0 ? 0 : probs.size() / classes; }
    std::span<const double> row(std::size_t i) const { return {probs.data() + i * classes, classes}; }
    // ContractError unless rows sum to 1 +- 1e-6 with nonnegative entries.
    void validate() const;
};

// Lowest index wins ties.
std::size_t argmax(std::span<const double> row);
double max_prob(std::span<const double> row);

struct AccuracyNll {
    double top1 = 0.0;
    double nll = 0.0;
};

inline constexpr double kProbFloor = 1e-12;

AccuracyNll accuracy_nll(const PredictionSet& preds);

struct CalibrationBin {
    std::size_t count = 0;
    double confidence = 0.0;  // mean max-probability
    double accuracy = 0.0;
};

// Equal-width bins [i/M, (i+1)/M); the last bin also holds 1.0.
std::vector<CalibrationBin> calibration_bins(const PredictionSet& preds, std::size_t bins);
double ece(const PredictionSet& preds, std::size_t bins = 15);

// Mann-Whitney statistic with ties counted 0.5; higher score = more
// in-distribution.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// Max softmax probability per row.
std::vector<double> msp_scores(const PredictionSet& preds);

// Plain mean of a complete kinds x severities error grid; NaN marks a
// missing cell.
double mce(const std::vector<std::vector<double>>& grid);

// sequences[n][t] is the probability row of frame t of sequence n.
using ProbSequence = std::vector<std::vector<double>>;

// Percentage of adjacent frame pairs whose argmax changes.
double mean_flip_probability(std::span<const ProbSequence> sequences);
// Mean over adjacent pairs of |S_t symmetric-difference S_{t-1}| / 2, S the
// top-5 index set (ties to the lower index).
double top5_distance(std::span<const ProbSequence> sequences);

struct PerturbationMetrics {
    double mfp = 0.0;
    double top5_distance = 0.0;
};
PerturbationMetrics perturbation_metrics(std::span<const ProbSequence> sequences);

// ---- report --------------------------------------------------------------

struct MetricRow {
    std::string metric;
    std::string dataset;
    std::string protocol;
    double value = 0.0;
    std::uint64_t seed = 0;
    std::string config_hash;

    bool operator==(const MetricRow&) const = default;
};

inline constexpr const char* kReportHeader = "metric,dataset,protocol,value,seed,config_hash";

struct EvalReport {
    std::vector<MetricRow> rows;

    // NumericError on a non-finite value, FormatError on a field holding a
    // comma or newline.
    void add(MetricRow row);
    const MetricRow* find(const std::string& metric, const std::string& dataset = "") const;

    std::string to_csv() const;
    nlohmann::json to_json() const;
    static EvalReport from_csv(const std::string& text);
    static EvalReport from_json(const nlohmann::json& doc);

    // Appends to report.csv and rewrites report.json (the full history).
    void append_to(const std::filesystem::path& dir) const;
    static EvalReport load(const std::filesystem::path& dir);
};

std::string format_value(double v);  // shortest round-trip decimal

}  // namespace swt::metrics
