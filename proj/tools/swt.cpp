#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "swt/commands.hpp"
#include "swt/errors.hpp"
#include "swt/selftest.hpp"

namespace {

std::map<std::string, swt::data::ImageDataset> parse_datasets(const std::vector<std::string>& specs,
                                                              std::size_t image_size) {
    std::map<std::string, swt::data::ImageDataset> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw swt::ConfigError("--dataset expects NAME=PATH, got '" + s + "'");
        const std::string name = s.substr(0, eq);
        if (out.count(name)) throw swt::ConfigError("dataset '" + name + "' given twice");
        out.emplace(name, swt::config::load_dataset(s.substr(eq + 1), image_size));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic Wasserstein transformer: pretraining, finetuning and evaluation"};
    app.require_subcommand(1);

    std::string config_path, out, ckpt, protocol = "ind";
    std::optional<std::uint64_t> seed;
    std::vector<std::string> datasets, runs;
    bool full = false;

    auto* pre = app.add_subcommand("pretrain", "Masked-token pretraining with the EMA teacher");
    pre->add_option("--config", config_path, "Run config (JSON)")->required();
    pre->add_option("--out", out, "Output directory")->required();
    pre->add_option("--seed", seed, "Override train.seed");

    auto* fin = app.add_subcommand("finetune", "Supervised finetuning or linear probe from a checkpoint");
    fin->add_option("--config", config_path, "Run config (JSON)")->required();
    fin->add_option("--ckpt", ckpt, "Initial checkpoint")->required();
    fin->add_option("--out", out, "Output directory")->required();
    fin->add_option("--seed", seed, "Override train.seed");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and append to the run report");
    ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
    ev->add_option("--protocol", protocol, "ind, ood, corrupt or perturb");
    ev->add_option("--dataset", datasets, "NAME=PATH or NAME=synth:..., repeatable (test, id, ood)");
    ev->add_option("--out", out, "Report directory")->required();
    ev->add_option("--seed", seed, "Seed recorded in the report rows");

    auto* rep = app.add_subcommand("report", "Merge run reports and summarize across seeds");
    rep->add_option("runs", runs, "Run directories holding report.csv");
    rep->add_option("--out", out, "Merged CSV path")->required();

    auto* self = app.add_subcommand("selftest", "Run the property and acceptance checks");
    self->add_flag("--full", full, "Include the long training criteria");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre) {
            auto r = swt::cli::cmd_pretrain(config_path, out, seed, &std::cerr);
            std::cout << r.checkpoint.string() << "\n";
        } else if (*fin) {
            auto r = swt::cli::cmd_finetune(config_path, ckpt, out, seed, &std::cerr);
            std::cout << r.checkpoint.string() << "\n";
        } else if (*ev) {
            const auto proto = swt::cli::parse_protocol(protocol);
            const auto cfg = swt::checkpoint::load(ckpt).config();
            swt::cli::EvalOptions opts;
            opts.seed = seed;
            auto report = swt::cli::cmd_eval(ckpt, proto, parse_datasets(datasets, cfg.model.image_size), out, opts);
            for (const auto& row : report.rows)
                std::cout << row.metric << "," << row.dataset << "," << swt::metrics::format_value(row.value) << "\n";
        } else if (*rep) {
            std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
            swt::cli::cmd_export_report(dirs, out);
            std::cout << out << "\n" << swt::cli::summary_path(out).string() << "\n";
        } else if (*self) {
            return swt::selftest::run_all(full ? swt::selftest::Scope::full : swt::selftest::Scope::quick, std::cout)
                       ? 0
                       : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
