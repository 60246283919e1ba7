#include "swt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "swt/errors.hpp"

namespace swt::config {

using nlohmann::json;

namespace {

// Enumerated fields are stored as names; the visitor sees them through these
// adapters.
template <class E>
struct Named {
    E& value;
    std::string_view (*name)(E);
    E (*parse)(std::string_view);
};

template <class V>
void visit_fields(RunConfig& c, V&& v) {
    auto& m = c.model;
    v("model", "image_size", m.image_size);
    v("model", "channels", m.channels);
    v("model", "patch", m.patch);
    v("model", "dim", m.dim);
    v("model", "heads", m.heads);
    v("model", "depth", m.depth);
    v("model", "classes", m.classes);
    v("model", "ffn_mult", m.ffn_mult);
    v("model", "init_std", m.init_std);
    v("model", "deterministic_attention", m.deterministic_attention);

    auto& t = c.train;
    v("train", "phase", Named<train::Phase>{t.phase, train::to_string, train::parse_phase});
    v("train", "epochs", t.epochs);
    v("train", "batch_size", t.batch_size);
    v("train", "lr", t.lr);
    v("train", "weight_decay", t.weight_decay);
    v("train", "beta1", t.beta1);
    v("train", "beta2", t.beta2);
    v("train", "adam_eps", t.adam_eps);
    v("train", "warmup_fraction", t.warmup_fraction);
    v("train", "clip_norm", t.clip_norm);
    v("train", "lambda", t.lambda);
    v("train", "lambda1", t.lambda1);
    v("train", "lambda2", t.lambda2);
    v("train", "smooth_l1_beta", t.smooth_l1_beta);
    v("train", "mask_ratio", t.mask_ratio);
    v("train", "target_top_k", t.target_top_k);
    v("train", "ema_decay", t.ema_decay);
    v("train", "sign_mode", Named<objectives::SignMode>{t.sign_mode, objectives::to_string, objectives::parse_sign_mode});
    v("train", "pooling", Named<objectives::PoolMode>{t.pooling, objectives::to_string, objectives::parse_pool_mode});
    v("train", "augment", t.augment);
    v("train", "augment_ops", t.augment_policy.num_ops);
    v("train", "augment_magnitude", t.augment_policy.magnitude);
    v("train", "seed", t.seed);
    v("train", "label_fraction", t.label_fraction);

    v("data", "train", c.data.train);
    v("data", "test", c.data.test);

    v("", "checkpoint_every", c.checkpoint_every);
}

std::string dotted(const char* section, const char* key) {
    return *section ? std::string(section) + "." + key : std::string(key);
}

struct Writer {
    json& doc;
    template <class T>
    void operator()(const char* section, const char* key, T&& value) {
        json& slot = *section ? doc[section][key] : doc[key];
        if constexpr (requires { value.parse; }) {
            slot = std::string(value.name(value.value));
        } else {
            slot = value;
        }
    }
};

struct Reader {
    const json& doc;
    std::map<std::string, bool> seen;

    template <class T>
    void operator()(const char* section, const char* key, T&& value) {
        const std::string name = dotted(section, key);
        seen[name] = true;
        const json* node = &doc;
        if (*section) {
            auto s = doc.find(section);
            if (s == doc.end()) return;
            node = &*s;
        }
        auto it = node->find(key);
        if (it == node->end()) return;
        const json& j = *it;
        auto wrong = [&](const char* want) {
            throw ConfigError("config key '" + name + "' must be " + want + ", got " + j.dump());
        };
        using V = std::remove_cvref_t<T>;
        if constexpr (requires { value.parse; }) {
            if (!j.is_string()) wrong("a string");
            value.value = value.parse(j.get<std::string>());
        } else if constexpr (std::is_same_v<V, bool>) {
            if (!j.is_boolean()) wrong("a boolean");
            value = j.get<bool>();
        } else if constexpr (std::is_same_v<V, std::string>) {
            if (!j.is_string()) wrong("a string");
            value = j.get<std::string>();
        } else if constexpr (std::is_floating_point_v<V>) {
            if (!j.is_number()) wrong("a number");
            value = j.get<double>();
        } else {
            if (!j.is_number_unsigned()) wrong("a nonnegative integer");
            value = j.get<V>();
        }
    }
};

}  // namespace

json RunConfig::to_json() const {
    json doc = json::object();
    RunConfig copy = *this;
    visit_fields(copy, Writer{doc});
    return doc;
}

RunConfig RunConfig::from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    RunConfig c;
    Reader r{doc, {}};
    visit_fields(c, r);
    for (const auto& [key, value] : doc.items()) {
        bool section = false;
        for (const auto& entry : r.seen) section |= entry.first.rfind(key + ".", 0) == 0;
        if (section) {
            if (!value.is_object()) throw ConfigError("config key '" + key + "' must be an object");
            for (const auto& [sub, _] : value.items()) {
                if (!r.seen.count(key + "." + sub)) throw ConfigError("unknown config key '" + key + "." + sub + "'");
            }
        } else if (!r.seen.count(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    return c;
}

RunConfig RunConfig::parse(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return from_json(doc);
}

std::string RunConfig::canonical() const { return to_json().dump(); }

std::string RunConfig::hash() const { return hex64(fnv1a(canonical())); }

void RunConfig::validate() const {
    train.validate(model);
    if (data.train.empty()) throw ConfigError("data.train is empty");
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("config file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return RunConfig::parse(ss.str());
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

data::ImageDataset load_dataset(const std::string& spec, std::size_t image_size) {
    constexpr std::string_view prefix = "synth:";
    if (spec.rfind(prefix, 0) != 0) {
        if (!std::filesystem::exists(spec)) throw NotFoundError("dataset not found: " + spec);
        return data::load_cifar(spec);
    }
    std::map<std::string, std::uint64_t> kv{{"seed", 0}, {"offset", 0}, {"size", image_size}};
    std::stringstream items(spec.substr(prefix.size()));
    std::string item;
    while (std::getline(items, item, ',')) {
        const auto eq = item.find('=');
        const std::string key = item.substr(0, eq);
        if (eq == std::string::npos || !(key == "classes" || key == "count" || kv.count(key))) {
            throw ConfigError("dataset spec '" + spec + "': bad item '" + item + "'");
        }
        std::uint64_t v = 0;
        const char* b = item.data() + eq + 1;
        const char* e = item.data() + item.size();
        auto [ptr, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || ptr != e || b == e) {
            throw ConfigError("dataset spec '" + spec + "': '" + key + "' is not an unsigned integer");
        }
        kv[key] = v;
    }
    if (!kv.count("classes") || !kv.count("count")) {
        throw ConfigError("dataset spec '" + spec + "' needs classes= and count=");
    }
    const std::size_t classes = kv["classes"], count = kv["count"], offset = kv["offset"];
    if (count == 0) throw ConfigError("dataset spec '" + spec + "': count must be positive");
    const std::size_t per_class = (offset + count + classes - 1) / std::max<std::size_t>(classes, 1);
    auto all = data::synth_blobs(classes, per_class, kv["size"], kv["seed"]);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = offset + i;
    auto ds = all.subset(idx);
    ds.name = spec;
    return ds;
}

}  // namespace swt::config
