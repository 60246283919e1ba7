#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "swt/commands.hpp"
#include "swt/errors.hpp"

using namespace swt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("swt_test_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

config::RunConfig small_run() {
    config::RunConfig c;
    c.model.dim = 16;
    c.model.heads = 2;
    c.model.depth = 2;
    c.model.classes = 3;
    c.train.epochs = 1;
    c.train.batch_size = 8;
    c.data.train = "synth:classes=3,count=30,seed=0";
    c.data.test = "synth:classes=3,count=15,seed=0,offset=30";
    return c;
}

config::RunConfig as_phase(config::RunConfig c, train::Phase phase, std::size_t epochs) {
    c.train.phase = phase;
    c.train.epochs = epochs;
    return c;
}

// Loss columns of the log without the wall-clock column.
std::vector<std::string> log_losses(const fs::path& dir) {
    std::istringstream in(slurp(dir / cli::kLogFile));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line.substr(0, line.rfind(',')));
    return out;
}

}  // namespace

// ---- config ----------------------------------------------------------------

TEST_CASE("config round-trips and canonicalizes") {
    config::RunConfig c = small_run();
    c.train.sign_mode = objectives::SignMode::paper_literal;
    c.train.lambda = 3e-5;
    auto back = config::RunConfig::parse(c.canonical());
    CHECK(back == c);
    CHECK(back.hash() == c.hash());
    CHECK(c.hash().size() == 16);

    // key order and omitted defaults do not matter
    auto a = config::RunConfig::parse(R"({"train": {"lambda": 0.5, "epochs": 3}, "model": {"dim": 32}})");
    auto b = config::RunConfig::parse(R"({"model": {"dim": 32}, "train": {"epochs": 3, "lambda": 0.5}})");
    CHECK(a.hash() == b.hash());
    CHECK(a.canonical() == b.canonical());
    auto full = config::RunConfig::parse(a.to_json().dump(2));
    CHECK(full.hash() == a.hash());

    auto c2 = a;
    c2.train.lambda = 0.25;
    CHECK(c2.hash() != a.hash());
    CHECK(config::RunConfig{}.canonical().find("\"lambda1\":0.0001") != std::string::npos);
}

TEST_CASE("config rejects unknown keys by name") {
    auto message = [](const std::string& text) {
        try {
            config::RunConfig::parse(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(message(R"({"train": {"lamda": 1e-5}})").find("lamda") != std::string::npos);
    CHECK(message(R"({"modle": {}})").find("modle") != std::string::npos);
    CHECK(message(R"({"train": {"epochs": -1}})").find("train.epochs") != std::string::npos);
    CHECK(message(R"({"train": {"epochs": 1.5}})").find("train.epochs") != std::string::npos);
    CHECK(message(R"({"train": {"augment": 1}})").find("train.augment") != std::string::npos);
    CHECK(message(R"({"train": {"sign_mode": "backwards"}})").find("backwards") != std::string::npos);
    CHECK(message(R"({"train": 3})").find("train") != std::string::npos);
    CHECK(message("{not json").find("JSON") != std::string::npos);
    CHECK(message(R"({"checkpoint_every": 2})") == "no error");
}

TEST_CASE("dataset specs") {
    auto part = config::load_dataset("synth:classes=3,count=10,seed=4,offset=5", 16);
    auto whole = data::synth_blobs(3, 5, 16, 4);
    REQUIRE(part.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(part.images[i] == whole.images[i + 5]);
        CHECK(part.labels[i] == whole.labels[i + 5]);
    }
    CHECK(config::load_dataset("synth:classes=4,count=7", 8).images[0].width == 8);
    CHECK(config::load_dataset("synth:classes=4,count=7,size=12", 8).images[0].width == 12);
    CHECK_THROWS_AS(config::load_dataset("synth:classes=3", 16), ConfigError);
    CHECK_THROWS_AS(config::load_dataset("synth:classes=3,count=x", 16), ConfigError);
    CHECK_THROWS_AS(config::load_dataset("synth:classes=3,count=4,colour=2", 16), ConfigError);
    CHECK_THROWS_AS(config::load_dataset("/nonexistent/cifar.bin", 32), NotFoundError);

    TempDir dir;
    auto ds = data::synth_blobs(2, 3, 32, 1);
    data::write_cifar(ds, dir.path / "x.bin");
    auto back = config::load_dataset((dir.path / "x.bin").string(), 32);
    CHECK(back.images == ds.images);
}

// ---- checkpoint ------------------------------------------------------------

TEST_CASE("checkpoint layout is bit-exact") {
    auto c = small_run();
    auto st = model::ModelState::create(c.model, 1);
    const std::string cfg = c.canonical();
    auto bytes = checkpoint::encode(cfg, st);
    auto u32 = [&](std::size_t at) {
        return std::uint32_t(bytes[at]) | std::uint32_t(bytes[at + 1]) << 8 | std::uint32_t(bytes[at + 2]) << 16 |
               std::uint32_t(bytes[at + 3]) << 24;
    };
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SWTC");
    CHECK(u32(4) == checkpoint::kVersion);
    CHECK(u32(8) == cfg.size());
    CHECK(std::string(bytes.begin() + 12, bytes.begin() + 12 + long(cfg.size())) == cfg);
    std::size_t at = 12 + cfg.size();
    CHECK(u32(at) == st.student.size() + st.teacher.size());
    at += 4;
    const std::string first = "student/embed.patch_mu.w";
    CHECK(u32(at) == first.size());
    CHECK(std::string(bytes.begin() + long(at) + 4, bytes.begin() + long(at + 4 + first.size())) == first);
    at += 4 + first.size();
    CHECK(u32(at) == 2);
    CHECK(u32(at + 4) == c.model.patch_dim());
    CHECK(u32(at + 8) == c.model.dim);
    double v;
    std::uint64_t raw = 0;
    for (int i = 0; i < 8; ++i) raw |= std::uint64_t(bytes[at + 12 + i]) << (8 * i);
    std::memcpy(&v, &raw, 8);
    CHECK(v == st.student.get("embed.patch_mu.w").data()[0]);
}

TEST_CASE("checkpoint round-trip is lossless") {
    auto c = small_run();
    auto st = model::ModelState::create(c.model, 7);
    // awkward values survive
    auto& w = st.student.get("head.b");
    w.mutable_data()[0] = -0.0;
    w.mutable_data()[1] = 5e-324;
    w.mutable_data()[2] = 1.0 / 3.0;
    for (double& x : st.teacher.get("head.b").mutable_data()) x = 0.125;

    TempDir dir;
    checkpoint::save(dir.path / "m.swtc", c, st);
    auto ck = checkpoint::load(dir.path / "m.swtc");
    CHECK(ck.config().hash() == c.hash());
    auto back = checkpoint::restore(ck, c.model, 0.9);
    CHECK(back.student.hash() == st.student.hash());
    CHECK(back.teacher.hash() == st.teacher.hash());
    CHECK(std::signbit(back.student.get("head.b").data()[0]));
    CHECK(back.ema_decay == 0.9);
    for (const auto& [name, t] : back.teacher) CHECK_FALSE(t.requires_grad());
    CHECK(checkpoint::file_hash(dir.path / "m.swtc").size() == 16);
}

TEST_CASE("checkpoint errors") {
    auto c = small_run();
    auto st = model::ModelState::create(c.model, 7);
    auto bytes = checkpoint::encode(c.canonical(), st);

    auto cut = bytes;
    cut.resize(cut.size() - 3);
    CHECK_THROWS_AS(checkpoint::decode(cut), FormatError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(checkpoint::decode(bad), FormatError);
    auto ver = bytes;
    ver[4] = 9;
    CHECK_THROWS_AS(checkpoint::decode(ver), FormatError);
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(checkpoint::decode(extra), FormatError);
    CHECK_THROWS_AS(checkpoint::load("/nonexistent/x.swtc"), NotFoundError);

    auto other = c.model;
    other.dim = 8;
    try {
        checkpoint::restore(checkpoint::decode(bytes), other, 0.999);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("student/embed.patch_mu.w: checkpoint [192, 16], model [192, 8]") != std::string::npos);
        CHECK(msg.find("teacher/") != std::string::npos);
    }
    auto deeper = c.model;
    deeper.depth = 3;
    try {
        checkpoint::restore(checkpoint::decode(bytes), deeper, 0.999);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("student/block2.qkv_mu.w: missing") != std::string::npos);
    }
}

// ---- commands ----------------------------------------------------------------

TEST_CASE("pretrain writes a loadable checkpoint and is reproducible") {
    TempDir dir;
    auto c = small_run();
    c.checkpoint_every = 1;
    c.train.epochs = 2;
    auto a = cli::cmd_pretrain(c, dir.path / "a");
    REQUIRE(fs::exists(a.checkpoint));
    CHECK(fs::exists(dir.path / "a" / "checkpoint_epoch1.swtc"));
    CHECK_FALSE(fs::exists(dir.path / "a" / "checkpoint_epoch2.swtc"));
    auto ck = checkpoint::load(a.checkpoint);
    auto back = checkpoint::restore(ck, c.model, c.train.ema_decay);
    CHECK(back.student.hash() == a.state.student.hash());
    CHECK(back.teacher.hash() == a.state.teacher.hash());
    CHECK(config::RunConfig::parse(slurp(dir.path / "a" / cli::kConfigFile)) == c);

    auto b = cli::cmd_pretrain(c, dir.path / "b");
    CHECK(a.config_hash == b.config_hash);
    auto la = log_losses(dir.path / "a"), lb = log_losses(dir.path / "b");
    CHECK(la.size() == 9);
    const std::string header = train::kLogHeader;
    CHECK(la[0] == header.substr(0, header.rfind(',')));
    CHECK(la == lb);
    CHECK(checkpoint::file_hash(a.checkpoint) == checkpoint::file_hash(b.checkpoint));
    auto run = nlohmann::json::parse(slurp(dir.path / "a" / cli::kRunFile));
    CHECK(run["samples"] == 30);
    CHECK(run["steps"] == 8);
    CHECK(run["config_hash"] == c.hash());

    CHECK_THROWS_AS(cli::cmd_pretrain(as_phase(c, train::Phase::finetune, 1), dir.path / "c"), ConfigError);
}

TEST_CASE("pretrain reads the config file and applies the seed override") {
    TempDir dir;
    {
        std::ofstream f(dir.path / "c.json");
        f << small_run().to_json().dump(2);
    }
    auto r = cli::cmd_pretrain(dir.path / "c.json", dir.path / "out", 42);
    CHECK(checkpoint::load(r.checkpoint).config().train.seed == 42);
    {
        std::ofstream f(dir.path / "typo.json");
        f << R"({"train": {"lamda": 0.1}})";
    }
    try {
        cli::cmd_pretrain(dir.path / "typo.json", dir.path / "typo");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("lamda") != std::string::npos);
    }
    CHECK_FALSE(fs::exists(dir.path / "typo"));
}

TEST_CASE("finetune") {
    TempDir dir;
    auto c = small_run();
    auto pre = cli::cmd_pretrain(c, dir.path / "pre");

    SUBCASE("missing init checkpoint fails before any work") {
        CHECK_THROWS_AS(cli::cmd_finetune(as_phase(c, train::Phase::finetune, 1), dir.path / "nope.swtc",
                                          dir.path / "ft"),
                        NotFoundError);
        CHECK_FALSE(fs::exists(dir.path / "ft"));
    }
    SUBCASE("linear probe keeps the encoder") {
        auto probe = as_phase(c, train::Phase::linear_probe, 2);
        probe.train.lr = 1e-2;
        auto r = cli::cmd_finetune(probe, pre.checkpoint, dir.path / "probe");
        auto before = checkpoint::restore(checkpoint::load(pre.checkpoint), c.model, 0.999);
        auto after = checkpoint::restore(checkpoint::load(r.checkpoint), c.model, 0.999);
        for (const char* p : {"embed", "block", "pretrain"}) CHECK(before.student.hash(p) == after.student.hash(p));
        CHECK(before.student.hash("head") != after.student.hash("head"));
    }
    SUBCASE("label fraction is logged") {
        auto ft = as_phase(c, train::Phase::finetune, 1);
        ft.data.train = "synth:classes=3,count=300,seed=0";
        ft.train.label_fraction = 0.1;
        ft.train.batch_size = 32;
        std::ostringstream progress;
        auto r = cli::cmd_finetune(ft, pre.checkpoint, dir.path / "frac", &progress);
        CHECK(r.summary.samples == 30);
        CHECK(progress.str().find("training samples: 30 of 300") != std::string::npos);
        CHECK(nlohmann::json::parse(slurp(dir.path / "frac" / cli::kRunFile))["samples"] == 30);
    }
    SUBCASE("architecture mismatch lists shapes") {
        auto wide = as_phase(c, train::Phase::finetune, 1);
        wide.model.dim = 24;
        try {
            cli::cmd_finetune(wide, pre.checkpoint, dir.path / "wide");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("checkpoint [192, 16], model [192, 24]") != std::string::npos);
        }
        auto heads = as_phase(c, train::Phase::finetune, 1);
        heads.model.heads = 4;
        CHECK_THROWS_AS(cli::cmd_finetune(heads, pre.checkpoint, dir.path / "heads"), ConfigError);
    }
    SUBCASE("pretrain phase is refused") {
        CHECK_THROWS_AS(cli::cmd_finetune(c, pre.checkpoint, dir.path / "x"), ConfigError);
    }
}

TEST_CASE("eval protocols") {
    TempDir dir;
    auto c = small_run();
    c.model.depth = 1;
    c.train.target_top_k = 1;
    c.data.train = "synth:classes=3,count=12,seed=0";
    auto ft = as_phase(c, train::Phase::finetune, 40);
    ft.train.lr = 3e-3;
    ft.train.augment = false;
    ft.train.batch_size = 12;
    ft.train.warmup_fraction = 0.0;
    ft.data.test = ft.data.train;
    config::RunConfig init = ft;
    init.train.phase = train::Phase::pretrain;
    const auto ck0 = dir.path / "init.swtc";
    checkpoint::save(ck0, init, model::ModelState::create(c.model, 3));
    auto r = cli::cmd_finetune(ft, ck0, dir.path / "ft");
    const auto before = checkpoint::file_hash(r.checkpoint);

    auto ind = cli::cmd_eval(r.checkpoint, cli::Protocol::ind, {}, dir.path / "eval");
    REQUIRE(ind.rows.size() == 3);
    CHECK(ind.find("top1")->value == 1.0);
    auto preds = train::predict(r.state, config::load_dataset(ft.data.train, 32));
    double conf = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) conf += metrics::max_prob(preds.row(i));
    conf /= static_cast<double>(preds.size());
    CHECK(std::abs(ind.find("ece")->value - (1.0 - conf)) <= 1e-12);
    CHECK(ind.rows[0].config_hash == ft.hash());
    CHECK(ind.rows[0].protocol == "ind");

    auto ds = config::load_dataset("synth:classes=3,count=40,seed=8", 32);
    auto ood = cli::cmd_eval(r.checkpoint, cli::Protocol::ood, {{"id", ds}, {"ood", ds}}, dir.path / "eval");
    CHECK(ood.find("auroc_msp")->value == 0.5);
    CHECK_THROWS_AS(cli::cmd_eval(r.checkpoint, cli::Protocol::ood, {}, dir.path / "eval"), ContractError);

    cli::EvalOptions opts;
    opts.seed = 11;
    auto cor = cli::cmd_eval(r.checkpoint, cli::Protocol::corrupt, {{"test", ds}}, dir.path / "eval", opts);
    CHECK(cor.rows.size() == 26);
    CHECK(cor.rows.front().metric == "error_gaussian_noise_1");
    CHECK(cor.rows.back().metric == "mce");
    CHECK(cor.rows.back().seed == 11);

    opts.perturb_sequences = 4;
    opts.perturb_frames = 3;
    auto per = cli::cmd_eval(r.checkpoint, cli::Protocol::perturb, {{"test", ds}}, dir.path / "eval", opts);
    CHECK(per.rows.size() == 6);  // three classes: no top-5 rows
    CHECK(per.find("mfp") != nullptr);
    CHECK(per.find("top5_distance") == nullptr);

    auto all = metrics::EvalReport::load(dir.path / "eval");
    CHECK(all.rows.size() == 3 + 1 + 26 + 6);
    CHECK(checkpoint::file_hash(r.checkpoint) == before);

    CHECK(cli::parse_protocol("corrupt") == cli::Protocol::corrupt);
    CHECK_THROWS_AS(cli::parse_protocol("cifar"), ConfigError);
}

TEST_CASE("export report") {
    TempDir dir;
    const double vals[] = {0.81, 0.84, 0.79, 0.9, 0.86};
    std::vector<fs::path> runs;
    for (int s = 0; s < 5; ++s) {
        metrics::EvalReport r;
        r.add({"top1", "test", "ind", vals[s], std::uint64_t(s), "abc"});
        r.add({"mce", "test", "corrupt", 0.5, std::uint64_t(s), "abc"});
        runs.push_back(dir.path / ("run" + std::to_string(s)));
        r.append_to(runs.back());
    }

    cli::cmd_export_report({runs[0]}, dir.path / "one.csv");
    std::string single = slurp(dir.path / "one.csv");
    std::istringstream in(slurp(runs[0] / "report.csv")), out(single);
    std::string a, b;
    std::getline(in, a);
    std::getline(out, b);
    CHECK(b == a + ",run");
    while (std::getline(in, a)) {
        REQUIRE(std::getline(out, b));
        CHECK(b == a + "," + runs[0].string());
    }

    cli::cmd_export_report(runs, dir.path / "all.csv");
    auto summary = nlohmann::json::parse(slurp(dir.path / "all.summary.json"));
    const auto& g = summary["groups"][0];
    CHECK(g["metric"] == "top1");
    CHECK(g["n"] == 5);
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= 5.0;
    double ss = 0.0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    CHECK(std::abs(g["mean"].get<double>() - 0.84) <= 1e-12);
    CHECK(std::abs(g["std"].get<double>() - std::sqrt(ss / 4.0)) <= 1e-12);
    CHECK(std::abs(g["std"].get<double>() - 0.0430116263352131) <= 1e-12);
    CHECK(summary["groups"][1]["std"] == 0.0);

    CHECK_THROWS_AS(cli::cmd_export_report({}, dir.path / "none.csv"), ConfigError);
    CHECK_FALSE(fs::exists(dir.path / "none.csv"));

    fs::create_directories(dir.path / "old");
    {
        std::ofstream f(dir.path / "old" / "report.csv");
        f << "metric,value\ntop1,0.5\n";
    }
    CHECK_THROWS_AS(cli::cmd_export_report({runs[0], dir.path / "old"}, dir.path / "mixed.csv"), FormatError);
    CHECK_FALSE(fs::exists(dir.path / "mixed.csv"));
    CHECK_THROWS_AS(cli::cmd_export_report({dir.path / "missing"}, dir.path / "m.csv"), NotFoundError);
}
