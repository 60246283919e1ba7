#include "swt/commands.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "swt/errors.hpp"

namespace swt::cli {

namespace {

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw FormatError("cannot write " + file.string());
}

config::RunConfig with_seed(config::RunConfig cfg, std::optional<std::uint64_t> seed) {
    if (seed) cfg.train.seed = *seed;
    return cfg;
}

// Shared tail of pretrain and finetune: log, periodic checkpoints, summary.
TrainResult train_into(model::ModelState state, const config::RunConfig& cfg, const fs::path& out,
                       std::ostream* progress) {
    fs::create_directories(out);
    write_text(out / kConfigFile, cfg.canonical() + "\n");
    const auto ds = config::load_dataset(cfg.data.train, cfg.model.image_size);

    std::ofstream log(out / kLogFile, std::ios::binary | std::ios::trunc);
    if (!log) throw FormatError("cannot write " + (out / kLogFile).string());
    log << train::kLogHeader << "\n";

    train::RunHooks hooks;
    double last_loss = 0.0;
    std::size_t last_step = 0;
    hooks.on_step = [&](const train::LogRow& row) {
        log << train::format_log_row(row) << "\n";
        last_loss = row.total;
        last_step = row.step;
    };
    hooks.on_epoch_end = [&](std::size_t epoch) {
        log.flush();
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch < cfg.train.epochs) {
            checkpoint::save(out / ("checkpoint_epoch" + std::to_string(epoch) + ".swtc"), cfg, state);
        }
        if (progress) {
            *progress << to_string(cfg.train.phase) << " epoch " << epoch << "/" << cfg.train.epochs << " step "
                      << last_step << " loss " << last_loss << std::endl;
        }
    };

    if (progress && cfg.train.phase != train::Phase::pretrain) {
        *progress << "training samples: " << train::subsample_indices(ds, cfg.train.label_fraction, cfg.train.seed).size()
                  << " of " << ds.size() << std::endl;
    }
    TrainResult r;
    r.summary = train::run(state, ds, cfg.train, hooks);
    log.close();
    r.checkpoint = out / kCheckpointFile;
    checkpoint::save(r.checkpoint, cfg, state);
    r.config_hash = cfg.hash();

    nlohmann::json run = {{"phase", std::string(to_string(cfg.train.phase))},
                          {"samples", r.summary.samples},
                          {"steps", r.summary.steps},
                          {"config_hash", r.config_hash},
                          {"final_loss", r.summary.log.empty() ? 0.0 : r.summary.log.back().total},
                          {"checkpoint", kCheckpointFile}};
    write_text(out / kRunFile, run.dump(2) + "\n");
    r.state = std::move(state);
    return r;
}

}  // namespace

TrainResult cmd_pretrain(const config::RunConfig& cfg, const fs::path& out, std::ostream* progress) {
    cfg.validate();
    if (cfg.train.phase != train::Phase::pretrain) {
        throw ConfigError("pretrain needs train.phase = \"pretrain\", config has \"" +
                          std::string(to_string(cfg.train.phase)) + "\"");
    }
    auto state = model::ModelState::create(cfg.model, cfg.train.seed, cfg.train.ema_decay);
    return train_into(std::move(state), cfg, out, progress);
}

TrainResult cmd_pretrain(const fs::path& config_path, const fs::path& out, std::optional<std::uint64_t> seed,
                         std::ostream* progress) {
    return cmd_pretrain(with_seed(config::load_config(config_path), seed), out, progress);
}

TrainResult cmd_finetune(const config::RunConfig& cfg, const fs::path& init, const fs::path& out,
                         std::ostream* progress) {
    if (!fs::is_regular_file(init)) throw NotFoundError("init checkpoint not found: " + init.string());
    cfg.validate();
    if (cfg.train.phase == train::Phase::pretrain) {
        throw ConfigError("finetune needs train.phase = \"finetune\" or \"linear_probe\"");
    }
    const auto ckpt = checkpoint::load(init);
    auto state = checkpoint::restore(ckpt, cfg.model, cfg.train.ema_decay);
    const auto saved = ckpt.config().model;
    std::string diff;
    if (saved.heads != cfg.model.heads) {
        diff += "\n  model.heads: checkpoint " + std::to_string(saved.heads) + ", config " + std::to_string(cfg.model.heads);
    }
    if (saved.deterministic_attention != cfg.model.deterministic_attention) {
        diff += "\n  model.deterministic_attention differs between checkpoint and config";
    }
    if (!diff.empty()) throw ConfigError("checkpoint does not match the model architecture:" + diff);
    return train_into(std::move(state), cfg, out, progress);
}

TrainResult cmd_finetune(const fs::path& config_path, const fs::path& init, const fs::path& out,
                         std::optional<std::uint64_t> seed, std::ostream* progress) {
    if (!fs::is_regular_file(init)) throw NotFoundError("init checkpoint not found: " + init.string());
    return cmd_finetune(with_seed(config::load_config(config_path), seed), init, out, progress);
}

// ---- evaluation ------------------------------------------------------------

std::string_view to_string(Protocol p) {
    switch (p) {
        case Protocol::ind: return "ind";
        case Protocol::ood: return "ood";
        case Protocol::corrupt: return "corrupt";
        case Protocol::perturb: return "perturb";
    }
    return "?";
}

Protocol parse_protocol(std::string_view name) {
    for (Protocol p : {Protocol::ind, Protocol::ood, Protocol::corrupt, Protocol::perturb})
        if (to_string(p) == name) return p;
    throw ConfigError("unknown protocol '" + std::string(name) + "' (expected ind, ood, corrupt or perturb)");
}

namespace {

const data::ImageDataset& need(const std::map<std::string, data::ImageDataset>& ds, const std::string& name,
                               Protocol p) {
    auto it = ds.find(name);
    if (it == ds.end()) {
        throw ContractError("protocol " + std::string(to_string(p)) + " needs a dataset named '" + name + "'");
    }
    if (it->second.size() == 0) throw ContractError("dataset '" + name + "' is empty");
    return it->second;
}

}  // namespace

metrics::EvalReport evaluate(const model::ModelState& state, Protocol protocol,
                             const std::map<std::string, data::ImageDataset>& datasets, std::uint64_t seed,
                             const std::string& config_hash, const EvalOptions& options) {
    metrics::EvalReport rep;
    const std::string proto(to_string(protocol));
    auto add = [&](const std::string& metric, const std::string& dataset, double value) {
        rep.add({metric, dataset, proto, value, seed, config_hash});
    };

    switch (protocol) {
        case Protocol::ind: {
            const auto& test = need(datasets, "test", protocol);
            auto preds = train::predict(state, test);
            auto an = metrics::accuracy_nll(preds);
            add("top1", "test", an.top1);
            add("nll", "test", an.nll);
            add("ece", "test", metrics::ece(preds));
            break;
        }
        case Protocol::ood: {
            const auto& id = datasets.count("id") ? need(datasets, "id", protocol) : need(datasets, "test", protocol);
            const auto& ood = need(datasets, "ood", protocol);
            auto id_scores = metrics::msp_scores(train::predict(state, id));
            auto ood_scores = metrics::msp_scores(train::predict(state, ood));
            add("auroc_msp", "ood", metrics::auroc(id_scores, ood_scores));
            break;
        }
        case Protocol::corrupt: {
            const auto& test = need(datasets, "test", protocol);
            std::vector<std::vector<double>> grid;
            for (auto kind : data::kCorruptionKinds) {
                auto& row = grid.emplace_back();
                for (int sev = 1; sev <= 5; ++sev) {
                    std::vector<data::Image> imgs;
                    imgs.reserve(test.size());
                    for (std::size_t i = 0; i < test.size(); ++i) {
                        imgs.push_back(data::corrupt(test.images[i], {kind, sev}, data::kCorruptionSeed + i));
                    }
                    auto preds = train::predict_images(state, imgs, test.stats);
                    preds.labels = test.labels;
                    row.push_back(1.0 - metrics::accuracy_nll(preds).top1);
                    add("error_" + std::string(data::to_string(kind)) + "_" + std::to_string(sev), "test", row.back());
                }
            }
            add("mce", "test", metrics::mce(grid));
            break;
        }
        case Protocol::perturb: {
            const auto& test = need(datasets, "test", protocol);
            const std::size_t n = std::min(options.perturb_sequences, test.size());
            const std::size_t frames = options.perturb_frames;
            const bool top5 = state.config.classes >= 5;
            double mfp_sum = 0.0, top5_sum = 0.0;
            for (auto kind : data::kCorruptionKinds) {
                std::vector<data::Image> imgs;
                for (std::size_t i = 0; i < n; ++i) {
                    auto seq = data::perturb_sequence(test.images[i], kind, frames, i, data::kCorruptionSeed + i);
                    for (auto& f : seq.frames) imgs.push_back(std::move(f));
                }
                auto preds = train::predict_images(state, imgs, test.stats);
                std::vector<metrics::ProbSequence> seqs(n);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t t = 0; t < frames; ++t) {
                        auto r = preds.row(i * frames + t);
                        seqs[i].emplace_back(r.begin(), r.end());
                    }
                const std::string k(data::to_string(kind));
                const double mfp = metrics::mean_flip_probability(seqs);
                mfp_sum += mfp;
                add("mfp_" + k, "test", mfp);
                if (top5) {
                    const double d = metrics::top5_distance(seqs);
                    top5_sum += d;
                    add("top5_" + k, "test", d);
                }
            }
            const double kinds = static_cast<double>(data::kCorruptionKinds.size());
            add("mfp", "test", mfp_sum / kinds);
            if (top5) add("top5_distance", "test", top5_sum / kinds);
            break;
        }
    }
    return rep;
}

metrics::EvalReport cmd_eval(const fs::path& ckpt_path, Protocol protocol,
                             const std::map<std::string, data::ImageDataset>& datasets, const fs::path& out,
                             const EvalOptions& options) {
    const auto ckpt = checkpoint::load(ckpt_path);
    const auto cfg = ckpt.config();
    const auto state = checkpoint::restore(ckpt, cfg.model, cfg.train.ema_decay);
    auto all = datasets;
    const bool needs_test = protocol != Protocol::ood || !all.count("id");
    if (needs_test && !all.count("test")) all.emplace("test", config::load_dataset(cfg.data.test, cfg.model.image_size));
    for (const auto& [name, ds] : all) ds.validate(cfg.model.patch);
    auto rep = evaluate(state, protocol, all, options.seed.value_or(cfg.train.seed), cfg.hash(), options);
    rep.append_to(out);
    return rep;
}

// ---- reports ---------------------------------------------------------------

std::vector<SummaryRow> summarize(const metrics::EvalReport& report) {
    std::vector<SummaryRow> groups;
    std::vector<std::vector<double>> values;
    for (const auto& r : report.rows) {
        std::size_t g = 0;
        while (g < groups.size() && !(groups[g].metric == r.metric && groups[g].protocol == r.protocol)) ++g;
        if (g == groups.size()) {
            groups.push_back({r.metric, r.protocol});
            values.emplace_back();
        }
        values[g].push_back(r.value);
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& v = values[g];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        groups[g].n = v.size();
        groups[g].mean = mean;
        groups[g].std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    }
    return groups;
}

fs::path summary_path(const fs::path& merged_csv) {
    auto p = merged_csv;
    return p.replace_extension(".summary.json");
}

void cmd_export_report(const std::vector<fs::path>& runs, const fs::path& out) {
    if (runs.empty()) throw ConfigError("report: no run directories given");
    std::ostringstream csv;
    csv << metrics::kReportHeader << ",run\n";
    metrics::EvalReport merged;
    for (const auto& dir : runs) {
        if (!fs::is_directory(dir)) throw NotFoundError("run directory not found: " + dir.string());
        metrics::EvalReport rep;
        try {
            rep = metrics::EvalReport::load(dir);
        } catch (const FormatError& e) {
            throw FormatError("report schema mismatch in " + dir.string() + ": " + e.what());
        }
        const std::string run = dir.string();
        if (run.find_first_of(",\"\n\r") != std::string::npos) {
            throw FormatError("run path '" + run + "' cannot be stored in a CSV field");
        }
        std::string body = rep.to_csv();
        body.erase(0, body.find('\n') + 1);
        std::istringstream lines(body);
        for (std::string line; std::getline(lines, line);)
            if (!line.empty()) csv << line << "," << run << "\n";
        merged.rows.insert(merged.rows.end(), rep.rows.begin(), rep.rows.end());
    }
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& s : summarize(merged)) {
        groups.push_back({{"metric", s.metric}, {"protocol", s.protocol}, {"n", s.n}, {"mean", s.mean}, {"std", s.std}});
    }
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text(out, csv.str());
    write_text(summary_path(out), nlohmann::json{{"groups", groups}}.dump(2) + "\n");
}

}  // namespace swt::cli
