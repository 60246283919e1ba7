#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swt/checkpoint.hpp"
#include "swt/config.hpp"
#include "swt/metrics.hpp"
#include "swt/train.hpp"

namespace swt::cli {

namespace fs = std::filesystem;

// Files written into an output directory by pretrain and finetune.
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kLogFile = "log.csv";
inline constexpr const char* kRunFile = "run.json";
inline constexpr const char* kCheckpointFile = "checkpoint.swtc";

struct TrainResult {
    fs::path checkpoint;
    train::RunSummary summary;
    std::string config_hash;
    model::ModelState state;
};

// `progress` receives one human-readable line per epoch when non-null.
TrainResult cmd_pretrain(const config::RunConfig& config, const fs::path& out, std::ostream* progress = nullptr);
TrainResult cmd_pretrain(const fs::path& config_path, const fs::path& out, std::optional<std::uint64_t> seed = {},
                         std::ostream* progress = nullptr);

// Phase must be finetune or linear_probe. The init checkpoint is checked
// for existence before anything else runs.
TrainResult cmd_finetune(const config::RunConfig& config, const fs::path& init, const fs::path& out,
                         std::ostream* progress = nullptr);
TrainResult cmd_finetune(const fs::path& config_path, const fs::path& init, const fs::path& out,
                         std::optional<std::uint64_t> seed = {}, std::ostream* progress = nullptr);

enum class Protocol { ind, ood, corrupt, perturb };
std::string_view to_string(Protocol p);
Protocol parse_protocol(std::string_view name);

struct EvalOptions {
    std::size_t perturb_frames = 10;
    std::size_t perturb_sequences = 50;  // first N images of the dataset
    std::optional<std::uint64_t> seed;   // reported seed; defaults to the checkpoint's
};

// Dataset roles by name:
//   ind, corrupt, perturb  "test" (falls back to the checkpoint config's data.test)
//   ood                    "id" (falls back like "test") and "ood" (required)
// Rows are appended to <out>/report.csv and report.json and also returned.
metrics::EvalReport cmd_eval(const fs::path& ckpt, Protocol protocol,
                             const std::map<std::string, data::ImageDataset>& datasets, const fs::path& out,
                             const EvalOptions& options = {});

// Same evaluation on an in-memory model; used by cmd_eval.
metrics::EvalReport evaluate(const model::ModelState& state, Protocol protocol,
                             const std::map<std::string, data::ImageDataset>& datasets, std::uint64_t seed,
                             const std::string& config_hash, const EvalOptions& options = {});

// Merges report.csv from each run directory into `out` (CSV with a trailing
// "run" column) and writes mean and sample std per (metric, protocol) to
// <out stem>.summary.json next to it. Nothing is written on error.
void cmd_export_report(const std::vector<fs::path>& runs, const fs::path& out);

struct SummaryRow {
    std::string metric;
    std::string protocol;
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample std, 0 when n == 1
};
std::vector<SummaryRow> summarize(const metrics::EvalReport& report);

fs::path summary_path(const fs::path& merged_csv);

}  // namespace swt::cli
