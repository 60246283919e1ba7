#include "swt/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <unistd.h>

#include "swt/commands.hpp"
#include "swt/errors.hpp"
#include "swt/metrics.hpp"
#include "swt/objectives.hpp"
#include "swt/ops.hpp"
#include "swt/wasserstein.hpp"

namespace swt::selftest {

namespace fs = std::filesystem;
using wasserstein::DiagGaussian;

namespace {

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

DiagGaussian random_gaussian(Rng& rng, std::size_t d, double var_lo, double var_hi) {
    DiagGaussian g;
    for (std::size_t i = 0; i < d; ++i) {
        g.mu.push_back(rng.uniform(-2.0, 2.0));
        g.var.push_back(rng.uniform(var_lo, var_hi));
    }
    return g;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

model::ModelConfig small_model(std::size_t classes) {
    model::ModelConfig m;
    m.dim = 16;
    m.heads = 2;
    m.depth = 1;
    m.classes = classes;
    return m;
}

// ---- 1-3: distance and attention --------------------------------------------

Outcome w2_oracle() {
    Rng rng(101, Stream::test);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = 1 + rng.below(8);
        auto a = random_gaussian(rng, d, 0.05, 2.0), b = random_gaussian(rng, d, 0.05, 2.0);
        double oracle = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            oracle += wasserstein::w2sq_oracle_1d(a.mu[i], a.var[i], b.mu[i], b.var[i], 1'000'000);
        worst = std::max(worst, std::abs(wasserstein::w2sq_diag(a, b) - oracle));
    }
    return {1, "W2 closed form vs quantile oracle", worst <= 1e-4, true,
            fmt("100 pairs, max |closed - oracle| = %.3g (limit 1e-4)", worst)};
}

Outcome metric_axioms() {
    Rng rng(77, Stream::test);
    std::size_t asym = 0, negative = 0;
    double worst_slack = -1e300;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t d = 1 + rng.below(8);
        auto a = random_gaussian(rng, d, 0.05, 3.0), b = random_gaussian(rng, d, 0.05, 3.0),
             c = random_gaussian(rng, d, 0.05, 3.0);
        const double ab = wasserstein::w2sq_diag(a, b), ba = wasserstein::w2sq_diag(b, a);
        const double ac = wasserstein::w2sq_diag(a, c), bc = wasserstein::w2sq_diag(b, c);
        asym += ab != ba;
        negative += (ab < 0.0) + (ac < 0.0) + (bc < 0.0);
        worst_slack = std::max(worst_slack, std::sqrt(ac) - std::sqrt(ab) - std::sqrt(bc));
    }
    const bool ok = asym == 0 && negative == 0 && worst_slack <= 1e-9;
    return {2, "W2 metric axioms", ok, true,
            fmt("1000 triples, asymmetric %zu, negative %zu, max triangle excess %.3g (limit 1e-9)", asym, negative,
                worst_slack)};
}

Outcome attention_validity() {
    Rng rng(12, Stream::test);
    double worst_row = 0.0, worst_shift = 0.0;
    bool single_exact = true;
    for (int trial = 0; trial < 20; ++trial) {
        model::ModelConfig cfg;
        cfg.heads = 1 + rng.below(4);
        cfg.dim = cfg.heads * (1 + rng.below(6));
        cfg.depth = 1;
        cfg.init_std = 0.5;
        const std::size_t b = 1 + rng.below(3), l = 1 + rng.below(9);
        auto params = model::init_params(cfg, 200 + trial);
        auto draw = [&](std::size_t len) {
            std::vector<double> mu(b * len * cfg.dim), sg(b * len * cfg.dim);
            for (double& v : mu) v = rng.uniform(-2.0, 2.0);
            for (double& v : sg) v = rng.uniform(-1.0, 1.5);
            return model::RawStochasticSequence{Tensor({b, len, cfg.dim}, mu), Tensor({b, len, cfg.dim}, sg)};
        };
        auto qkv = model::project_qkv(draw(l), params, "block0", cfg);
        auto out = model::wasserstein_attention(qkv);
        for (std::size_t r = 0; r < out.scores.numel() / l; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < l; ++j) s += out.scores.data()[r * l + j];
            worst_row = std::max(worst_row, std::abs(s - 1.0));
        }
        const double inv = -1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
        Tensor dist = wasserstein::pairwise_w2sq(qkv.q.mu, qkv.q.var, qkv.k.mu, qkv.k.var);
        for (double c : {37.5, -12.25}) {
            Tensor shifted = softmax(scale(add_scalar(dist, c), inv), 2);
            worst_shift = std::max(worst_shift, max_abs_diff(shifted, out.scores));
        }
        auto one = model::wasserstein_attention(model::project_qkv(draw(1), params, "block0", cfg));
        for (double s : one.scores.data()) single_exact &= s == 1.0;
    }
    const bool ok = worst_row <= 1e-6 && worst_shift <= 1e-9 && single_exact;
    return {3, "attention validity", ok, true,
            fmt("20 configs, max |row sum - 1| = %.3g, max shift deviation %.3g, L=1 exact: %s", worst_row,
                worst_shift, single_exact ? "yes" : "no")};
}

// ---- 4-6: objectives and training ------------------------------------------

Outcome gradient_fidelity() {
    model::ModelConfig tiny;
    tiny.image_size = 16;
    tiny.patch = 8;
    tiny.dim = 8;
    tiny.heads = 2;
    tiny.depth = 1;
    tiny.classes = 3;
    struct Case {
        const char* name;
        train::Phase phase;
        objectives::SignMode mode;
    };
    double worst = 0.0, min_var = 1e300;
    std::size_t coords = 0;
    std::string parts;
    for (Case k : {Case{"pretrain", train::Phase::pretrain, objectives::SignMode::corrected},
                   Case{"finetune/corrected", train::Phase::finetune, objectives::SignMode::corrected},
                   Case{"finetune/paper_literal", train::Phase::finetune, objectives::SignMode::paper_literal}}) {
        train::TrainConfig c;
        c.phase = k.phase;
        c.sign_mode = k.mode;
        c.target_top_k = 1;
        c.lambda = c.lambda1 = c.lambda2 = 0.5;
        double v = 0.0;
        auto r = train::loss_grad_check(tiny, c, 4, &v);
        worst = std::max(worst, r.max_rel_error);
        min_var = std::min(min_var, v);
        coords += r.coordinates;
        parts += fmt("%s%s %.2g", parts.empty() ? "" : ", ", k.name, r.max_rel_error);
    }
    return {4, "full-model gradient check", worst <= 1e-4 && min_var >= 1e-3, true,
            fmt("%zu coordinates, max rel error %.3g (limit 1e-4) [%s], min variance %.3g", coords, worst,
                parts.c_str(), min_var)};
}

Outcome regularizer_values() {
    auto at = [](double w, double lambda) { return objectives::pretrain_regularizer(Tensor::full({}, w), lambda).item(); };
    const double lambda = 1e-5;
    const double e0 = std::abs(at(0.0, lambda) - 0.693147 * lambda);
    const double e2 = std::abs(at(2.0, lambda) - 2.126928 * lambda);
    // unit lambda against the exact constants
    const double x0 = std::abs(at(0.0, 1.0) - std::log(2.0));
    const double x2 = std::abs(at(2.0, 1.0) - std::log1p(std::exp(2.0)));
    const bool ok = e0 <= 1e-9 && e2 <= 1e-6 && x0 <= 1e-15 && x2 <= 1e-14;
    return {5, "pretraining penalty closed values", ok, true,
            fmt("lambda 1e-5: |R(0) - 0.693147 l| = %.2g, |R(2) - 2.126928 l| = %.2g; unit lambda vs exact: %.2g, %.2g",
                e0, e2, x0, x2)};
}

Outcome overfit() {
    auto losses = train::overfit_probe(model::ModelConfig{}, train::TrainConfig{}, 50);
    bool finite = !losses.empty();
    for (double v : losses) finite &= std::isfinite(v);
    const double ratio = losses.back() / losses.front();
    return {6, "overfit probe", finite && ratio < 0.1, true,
            fmt("loss %.4g -> %.4g over 50 steps, ratio %.3f (limit 0.1), finite: %s", losses.front(), losses.back(),
                ratio, finite ? "yes" : "no")};
}

// ---- 7, 10, 11: toy pipelines -------------------------------------------------

config::RunConfig toy_config(std::uint64_t seed) {
    config::RunConfig c;
    c.model.classes = 3;
    c.train.seed = seed;
    c.data.train = "synth:classes=3,count=500,seed=0";
    c.data.test = "synth:classes=3,count=200,seed=0,offset=500";
    return c;
}

config::RunConfig finetune_of(config::RunConfig c, std::size_t epochs, objectives::SignMode mode) {
    c.train.phase = train::Phase::finetune;
    c.train.epochs = epochs;
    c.train.sign_mode = mode;
    return c;
}

double top1_on(const model::ModelState& st, const data::ImageDataset& test) {
    return metrics::accuracy_nll(train::predict(st, test)).top1;
}

Outcome end_to_end(const fs::path& work) {
    auto pre = toy_config(0);
    pre.train.epochs = 100;
    auto p = cli::cmd_pretrain(pre, work / "e2e_pretrain");
    const auto test = config::load_dataset(pre.data.test, pre.model.image_size);
    auto fc = cli::cmd_finetune(finetune_of(pre, 20, objectives::SignMode::corrected), p.checkpoint,
                                work / "e2e_corrected");
    auto fl = cli::cmd_finetune(finetune_of(pre, 20, objectives::SignMode::paper_literal), p.checkpoint,
                                work / "e2e_literal");
    const double corrected = top1_on(fc.state, test), literal = top1_on(fl.state, test);
    const bool ok = corrected >= 0.95 && corrected >= literal - 0.02;
    return {7, "end-to-end toy learning", ok, true,
            fmt("test top-1 corrected %.4f (limit 0.95), paper_literal %.4f, gap %.4f (limit -0.02)", corrected,
                literal, corrected - literal)};
}

struct PipelineOutput {
    std::vector<double> values;
    std::vector<std::string> hashes;
};

PipelineOutput small_pipeline(const fs::path& dir) {
    auto pre = toy_config(3);
    pre.data.train = "synth:classes=3,count=60,seed=0";
    pre.data.test = "synth:classes=3,count=30,seed=0,offset=60";
    pre.train.epochs = 2;
    pre.train.batch_size = 32;
    auto p = cli::cmd_pretrain(pre, dir / "pretrain");
    auto f = cli::cmd_finetune(finetune_of(pre, 2, objectives::SignMode::corrected), p.checkpoint, dir / "finetune");
    PipelineOutput out;
    for (auto proto : {cli::Protocol::ind, cli::Protocol::corrupt}) {
        auto rep = cli::cmd_eval(f.checkpoint, proto, {}, dir / "eval");
        for (const auto& r : rep.rows) out.values.push_back(r.value);
    }
    out.hashes = {checkpoint::file_hash(p.checkpoint), checkpoint::file_hash(f.checkpoint)};
    return out;
}

Outcome determinism(const fs::path& work) {
    auto a = small_pipeline(work / "det_a");
    auto b = small_pipeline(work / "det_b");
    const bool ok = a.values == b.values && a.hashes == b.hashes && !a.values.empty();
    return {10, "pipeline determinism", ok, true,
            fmt("%zu report values %s, checkpoint hashes %s / %s vs %s / %s", a.values.size(),
                a.values == b.values ? "identical" : "DIFFER", a.hashes[0].c_str(), a.hashes[1].c_str(),
                b.hashes[0].c_str(), b.hashes[1].c_str())};
}

Outcome w2_vs_ablation(const fs::path& work) {
    // Reduced budget: 10 pretraining + 10 finetuning epochs per run.
    double sum_w = 0.0, sum_d = 0.0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        double err[2];
        for (int ablate = 0; ablate < 2; ++ablate) {
            auto pre = toy_config(seed);
            pre.train.epochs = 10;
            if (ablate) {
                pre.model.deterministic_attention = true;
                pre.train.lambda = pre.train.lambda1 = pre.train.lambda2 = 0.0;
            }
            const auto dir = work / fmt("dir_s%llu_%s", static_cast<unsigned long long>(seed), ablate ? "det" : "w2");
            auto p = cli::cmd_pretrain(pre, dir / "pretrain");
            auto f = cli::cmd_finetune(finetune_of(pre, 10, objectives::SignMode::corrected), p.checkpoint,
                                       dir / "finetune");
            auto test = config::load_dataset(pre.data.test, pre.model.image_size);
            for (std::size_t i = 0; i < test.size(); ++i)
                test.images[i] = data::corrupt(test.images[i], {data::CorruptionKind::gaussian_noise, 3},
                                               data::kCorruptionSeed + i);
            err[ablate] = 1.0 - top1_on(f.state, test);
        }
        sum_w += err[0];
        sum_d += err[1];
        per_seed += fmt("%s%.3f/%.3f", per_seed.empty() ? "" : " ", err[0], err[1]);
    }
    const double mw = sum_w / 3.0, md = sum_d / 3.0;
    return {11, "corruption error vs deterministic ablation", mw <= md + 0.02, false,
            fmt("gaussian noise s3 error, mean over 3 seeds: wasserstein %.4f, ablation %.4f, excess %.4f "
                "(limit 0.02); per seed w2/det %s",
                mw, md, mw - md, per_seed.c_str())};
}

// ---- 8, 9: metrics and protocols -------------------------------------------------

Outcome metric_oracles() {
    Rng rng(3, Stream::test);
    double worst_auroc = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> id(1 + rng.below(60)), ood(1 + rng.below(60));
        for (double& v : id) v = std::round(rng.uniform(0.2, 1.0) * 20.0) / 20.0;
        for (double& v : ood) v = std::round(rng.uniform(0.0, 0.9) * 20.0) / 20.0;
        double wins = 0.0;
        for (double a : id)
            for (double b : ood) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
        const double pairwise = wins / static_cast<double>(id.size() * ood.size());
        worst_auroc = std::max(worst_auroc, std::abs(metrics::auroc(id, ood) - pairwise));
    }

    double worst_ece = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        metrics::PredictionSet p;
        p.classes = 5;
        for (int i = 0; i < 40; ++i) {
            double row[5], s = 0.0;
            for (double& v : row) s += (v = std::exp(3.0 * rng.normal()));
            for (double v : row) p.probs.push_back(v / s);
            p.labels.push_back(static_cast<int>(rng.below(5)));
        }
        double conf = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) conf += metrics::max_prob(p.row(i));
        conf /= static_cast<double>(p.size());
        worst_ece = std::max(worst_ece, std::abs(metrics::ece(p, 1) - std::abs(metrics::accuracy_nll(p).top1 - conf)));
    }

    auto cfg = small_model(3);
    auto state = model::ModelState::create(cfg, 8);
    const auto test = data::synth_blobs(3, 40, cfg.image_size, 5);
    const double clean = 1.0 - top1_on(state, test);
    std::vector<std::vector<double>> grid;
    bool identity = true;
    for (auto kind : data::kCorruptionKinds) {
        auto& row = grid.emplace_back();
        for (int sev = 0; sev < 5; ++sev) {
            std::vector<data::Image> imgs;
            for (std::size_t i = 0; i < test.size(); ++i) {
                imgs.push_back(data::corrupt_with_parameter(test.images[i], kind, 0.0, data::kCorruptionSeed + i));
                identity &= imgs.back() == test.images[i];
            }
            auto preds = train::predict_images(state, imgs, test.stats);
            preds.labels = test.labels;
            row.push_back(1.0 - metrics::accuracy_nll(preds).top1);
        }
    }
    const double m = metrics::mce(grid);
    const bool ok = worst_auroc <= 1e-12 && worst_ece <= 1e-12 && m == clean && identity;
    return {8, "metric oracles", ok, true,
            fmt("auroc vs pairwise %.2g, ece(M=1) vs |acc - conf| %.2g (limits 1e-12); identity mCE %.6f vs clean "
                "error %.6f (%s)",
                worst_auroc, worst_ece, m, clean, m == clean ? "exact" : "DIFFER")};
}

Outcome protocol_plumbing(const fs::path& work) {
    config::RunConfig rc;
    rc.model = small_model(3);
    rc.data.test = "synth:classes=3,count=30,seed=0,offset=60";
    auto st = model::ModelState::create(rc.model, 1);
    const auto ck = work / "plumbing" / "model.swtc";
    checkpoint::save(ck, rc, st);
    const auto before = checkpoint::file_hash(ck);

    auto corrupt = cli::cmd_eval(ck, cli::Protocol::corrupt, {}, work / "plumbing" / "corrupt");
    std::size_t grid_rows = 0;
    double grid_sum = 0.0;
    for (const auto& r : corrupt.rows)
        if (r.metric.rfind("error_", 0) == 0) {
            ++grid_rows;
            grid_sum += r.value;
        }
    const auto* mce_row = corrupt.find("mce");
    const bool grid_ok = grid_rows == 25 && corrupt.rows.size() == 26 && mce_row &&
                         std::abs(mce_row->value - grid_sum / 25.0) <= 1e-12;

    // constant predictions: zero head gives uniform probabilities for every input
    config::RunConfig flat = rc;
    flat.model.classes = 10;
    auto fs_state = model::ModelState::create(flat.model, 2);
    for (const char* n : {"head.w", "head.b"})
        for (double& v : fs_state.student.get(n).mutable_data()) v = 0.0;
    const auto flat_ck = work / "plumbing" / "flat.swtc";
    checkpoint::save(flat_ck, flat, fs_state);
    cli::EvalOptions opts;
    opts.perturb_sequences = 10;
    auto perturb = cli::cmd_eval(flat_ck, cli::Protocol::perturb, {}, work / "plumbing" / "perturb", opts);
    const double mfp = perturb.find("mfp")->value, top5 = perturb.find("top5_distance")->value;

    auto same = data::synth_blobs(3, 167, rc.model.image_size, 9);
    std::vector<std::size_t> idx(500);
    for (std::size_t i = 0; i < 500; ++i) idx[i] = i;
    same = same.subset(idx);
    auto ood = cli::cmd_eval(ck, cli::Protocol::ood, {{"id", same}, {"ood", same}}, work / "plumbing" / "ood");
    const double auc = ood.find("auroc_msp")->value;
    const bool untouched = checkpoint::file_hash(ck) == before;

    const bool ok = grid_ok && mfp == 0.0 && top5 == 0.0 && std::abs(auc - 0.5) <= 0.02 && untouched;
    return {9, "protocol plumbing", ok, true,
            fmt("corrupt rows %zu + mCE %s; constant fixture MFP %g, top-5 distance %g; ID==OOD AUROC %.4f at n=500; "
                "checkpoint unchanged: %s",
                grid_rows, grid_ok ? "consistent" : "WRONG", mfp, top5, auc, untouched ? "yes" : "no")};
}

}  // namespace

std::string format(const Outcome& o) {
    return fmt("[%s] %2d %s%s: %s (%.1f s)", o.pass ? "PASS" : "FAIL", o.id, o.title.c_str(),
               o.binding ? "" : " (non-binding)", o.detail.c_str(), o.seconds);
}

std::vector<Outcome> run(const Options& options, std::ostream& out) {
    fs::path work = options.work_dir;
    if (work.empty()) work = fs::temp_directory_path() / ("swt_selftest_" + std::to_string(::getpid()));
    fs::remove_all(work);
    fs::create_directories(work);

    struct Entry {
        int id;
        const char* title;
        double limit_s;  // 0 = no time limit
        bool long_run;
        std::function<Outcome()> fn;
    };
    const std::vector<Entry> entries{
        {1, "W2 closed form vs quantile oracle", 10, false, w2_oracle},
        {2, "W2 metric axioms", 5, false, metric_axioms},
        {3, "attention validity", 0, false, attention_validity},
        {4, "full-model gradient check", 60, false, gradient_fidelity},
        {5, "pretraining penalty closed values", 0, false, regularizer_values},
        {6, "overfit probe", 120, false, overfit},
        {7, "end-to-end toy learning", 1800, true, [&] { return end_to_end(work); }},
        {8, "metric oracles", 0, false, metric_oracles},
        {9, "protocol plumbing", 0, false, [&] { return protocol_plumbing(work); }},
        {10, "pipeline determinism", 0, true, [&] { return determinism(work); }},
        {11, "corruption error vs deterministic ablation", 0, true, [&] { return w2_vs_ablation(work); }},
    };

    std::vector<Outcome> results;
    for (const auto& e : entries) {
        if (!options.only.empty() ? !options.only.count(e.id) : (e.long_run && options.scope == Scope::quick)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = e.fn();
        } catch (const std::exception& ex) {
            o = {e.id, e.title, false, e.id != 11, std::string("error: ") + ex.what()};
        }
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (e.limit_s > 0 && o.seconds >= e.limit_s) {
            o.pass = false;
            o.detail += fmt("; over the %.0f s limit", e.limit_s);
        }
        out << format(o) << std::endl;
        results.push_back(std::move(o));
    }
    fs::remove_all(work);
    return results;
}

bool run_all(Scope scope, std::ostream& out) {
    bool ok = true;
    for (const auto& o : run({scope, {}, {}}, out)) ok &= o.pass || !o.binding;
    return ok;
}

}  // namespace swt::selftest
