#include "swt/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "swt/errors.hpp"

namespace swt::metrics {

void PredictionSet::validate() const {
    if (classes == 0 || probs.size() % classes != 0) throw ContractError("prediction set: bad probability table");
    if (!labels.empty() && labels.size() != size()) {
        throw ContractError("prediction set: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(size()) + " rows");
    }
    for (std::size_t i = 0; i < size(); ++i) {
        double s = 0.0;
        for (double p : row(i)) {
            if (!(p >= 0.0)) throw ContractError("prediction set: negative probability in row " + std::to_string(i));
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-6) throw ContractError("prediction set: row " + std::to_string(i) + " sums to " +
                                                          std::to_string(s));
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) throw ContractError("prediction set: label out of range");
    }
}

std::size_t argmax(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

double max_prob(std::span<const double> row) { return row[argmax(row)]; }

namespace {

void require_labels(const PredictionSet& p, const char* who) {
    if (p.labels.empty() || p.size() == 0) throw ContractError(std::string(who) + ": labels required");
    p.validate();
}

}  // namespace

AccuracyNll accuracy_nll(const PredictionSet& preds) {
    require_labels(preds, "accuracy_nll");
    double correct = 0.0, nll = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto r = preds.row(i);
        const auto label = static_cast<std::size_t>(preds.labels[i]);
        correct += argmax(r) == label ? 1.0 : 0.0;
        nll -= std::log(std::max(r[label], kProbFloor));
    }
    const double n = static_cast<double>(preds.size());
    return {correct / n, nll / n};
}

std::vector<CalibrationBin> calibration_bins(const PredictionSet& preds, std::size_t bins) {
    require_labels(preds, "ece");
    if (bins == 0) throw ContractError("ece: bin count must be positive");
    std::vector<CalibrationBin> out(bins);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto r = preds.row(i);
        const std::size_t a = argmax(r);
        const double conf = r[a];
        auto b = std::min(bins - 1, static_cast<std::size_t>(conf * static_cast<double>(bins)));
        out[b].count += 1;
        out[b].confidence += conf;
        out[b].accuracy += a == static_cast<std::size_t>(preds.labels[i]) ? 1.0 : 0.0;
    }
    for (auto& b : out) {
        if (b.count == 0) continue;
        b.confidence /= static_cast<double>(b.count);
        b.accuracy /= static_cast<double>(b.count);
    }
    return out;
}

double ece(const PredictionSet& preds, std::size_t bins) {
    const double n = static_cast<double>(preds.size());
    double e = 0.0;
    for (const auto& b : calibration_bins(preds, bins)) {
        if (b.count) e += static_cast<double>(b.count) / n * std::abs(b.accuracy - b.confidence);
    }
    return e;
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty()) throw ContractError("auroc: both score lists must be nonempty");
    struct Item {
        double score;
        bool id;
    };
    std::vector<Item> all;
    all.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) all.push_back({s, true});
    for (double s : ood_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
    // U = sum over tied groups of (id in group) * (ood strictly below + ood in group / 2)
    double u = 0.0, ood_below = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        double id_n = 0.0, ood_n = 0.0;
        while (j < all.size() && all[j].score == all[i].score) {
            (all[j].id ? id_n : ood_n) += 1.0;
            ++j;
        }
        u += id_n * (ood_below + 0.5 * ood_n);
        ood_below += ood_n;
        i = j;
    }
    return u / (static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

std::vector<double> msp_scores(const PredictionSet& preds) {
    std::vector<double> s(preds.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = max_prob(preds.row(i));
    return s;
}

double mce(const std::vector<std::vector<double>>& grid) {
    if (grid.empty() || grid[0].empty()) throw ContractError("mce: empty error grid");
    // extended accumulator: a grid of identical cells averages back to that cell exactly
    long double s = 0.0L;
    std::size_t n = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (grid[k].size() != grid[0].size()) {
            throw ContractError("mce: row " + std::to_string(k) + " has " + std::to_string(grid[k].size()) +
                                " cells, expected " + std::to_string(grid[0].size()));
        }
        for (std::size_t j = 0; j < grid[k].size(); ++j) {
            if (std::isnan(grid[k][j])) {
                throw ContractError("mce: missing cell (" + std::to_string(k) + ", " + std::to_string(j) + ")");
            }
            s += grid[k][j];
            ++n;
        }
    }
    return static_cast<double>(s / static_cast<long double>(n));
}

namespace {

void check_sequences(std::span<const ProbSequence> seqs, const char* who) {
    if (seqs.empty()) throw ContractError(std::string(who) + ": no sequences");
    for (const auto& s : seqs) {
        if (s.size() < 2) throw ContractError(std::string(who) + ": sequences need at least 2 frames");
    }
}

std::vector<std::size_t> top5(const std::vector<double>& row) {
    std::vector<std::size_t> idx(row.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    idx.resize(5);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

double mean_flip_probability(std::span<const ProbSequence> sequences) {
    check_sequences(sequences, "mfp");
    double flips = 0.0, pairs = 0.0;
    for (const auto& s : sequences) {
        for (std::size_t t = 1; t < s.size(); ++t) {
            flips += argmax(s[t]) != argmax(s[t - 1]) ? 1.0 : 0.0;
            pairs += 1.0;
        }
    }
    return 100.0 * flips / pairs;
}

double top5_distance(std::span<const ProbSequence> sequences) {
    check_sequences(sequences, "top5_distance");
    double total = 0.0, pairs = 0.0;
    for (const auto& s : sequences) {
        for (const auto& row : s) {
            if (row.size() < 5) throw ContractError("top5_distance: needs at least 5 classes");
        }
        auto prev = top5(s[0]);
        for (std::size_t t = 1; t < s.size(); ++t) {
            auto cur = top5(s[t]);
            std::vector<std::size_t> diff;
            std::set_symmetric_difference(prev.begin(), prev.end(), cur.begin(), cur.end(), std::back_inserter(diff));
            total += static_cast<double>(diff.size()) / 2.0;
            pairs += 1.0;
            prev = std::move(cur);
        }
    }
    return total / pairs;
}

PerturbationMetrics perturbation_metrics(std::span<const ProbSequence> sequences) {
    return {mean_flip_probability(sequences), top5_distance(sequences)};
}

// ---- report --------------------------------------------------------------

std::string format_value(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw FormatError("cannot format value");
    return std::string(buf, end);
}

namespace {

void check_field(const std::string& s, const char* name) {
    if (s.find_first_of(",\n\r\"") != std::string::npos) {
        throw FormatError(std::string("report field ") + name + " may not contain commas, quotes or newlines: '" + s +
                          "'");
    }
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("bad number '" + s + "'");
    return v;
}

std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("bad integer '" + s + "'");
    return v;
}

}  // namespace

void EvalReport::add(MetricRow row) {
    if (!std::isfinite(row.value)) throw NumericError("metric " + row.metric + " is not finite");
    check_field(row.metric, "metric");
    check_field(row.dataset, "dataset");
    check_field(row.protocol, "protocol");
    check_field(row.config_hash, "config_hash");
    rows.push_back(std::move(row));
}

const MetricRow* EvalReport::find(const std::string& metric, const std::string& dataset) const {
    for (const auto& r : rows)
        if (r.metric == metric && (dataset.empty() || r.dataset == dataset)) return &r;
    return nullptr;
}

std::string EvalReport::to_csv() const {
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& r : rows) {
        out += r.metric + "," + r.dataset + "," + r.protocol + "," + format_value(r.value) + "," +
               std::to_string(r.seed) + "," + r.config_hash + "\n";
    }
    return out;
}

nlohmann::json EvalReport::to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) {
        arr.push_back({{"metric", r.metric},
                       {"dataset", r.dataset},
                       {"protocol", r.protocol},
                       {"value", r.value},
                       {"seed", r.seed},
                       {"config_hash", r.config_hash}});
    }
    return nlohmann::json{{"rows", arr}};
}

EvalReport EvalReport::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader) {
        throw FormatError("report: unexpected header '" + line + "' (expected '" + kReportHeader + "')");
    }
    EvalReport rep;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split(line, ',');
        if (f.size() != 6) throw FormatError("report line " + std::to_string(lineno) + ": expected 6 fields");
        rep.add({f[0], f[1], f[2], parse_double(f[3]), parse_u64(f[4]), f[5]});
    }
    return rep;
}

EvalReport EvalReport::from_json(const nlohmann::json& doc) {
    EvalReport rep;
    try {
        for (const auto& r : doc.at("rows")) {
            rep.add({r.at("metric").get<std::string>(), r.at("dataset").get<std::string>(),
                     r.at("protocol").get<std::string>(), r.at("value").get<double>(),
                     r.at("seed").get<std::uint64_t>(), r.at("config_hash").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("report json: ") + e.what());
    }
    return rep;
}

void EvalReport::append_to(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    EvalReport all = std::filesystem::exists(dir / "report.csv") ? load(dir) : EvalReport{};
    for (const auto& r : rows) all.rows.push_back(r);
    {
        std::ofstream out(dir / "report.csv", std::ios::binary | std::ios::trunc);
        out << all.to_csv();
        if (!out) throw FormatError("cannot write " + (dir / "report.csv").string());
    }
    std::ofstream out(dir / "report.json", std::ios::binary | std::ios::trunc);
    out << all.to_json().dump(2) << "\n";
    if (!out) throw FormatError("cannot write " + (dir / "report.json").string());
}

EvalReport EvalReport::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "report.csv", std::ios::binary);
    if (!in) throw FormatError("no report.csv in " + dir.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_csv(ss.str());
}

}  // namespace swt::metrics
