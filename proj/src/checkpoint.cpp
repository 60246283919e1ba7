#include "swt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "swt/errors.hpp"

namespace swt::checkpoint {

namespace {

constexpr char kMagic[4] = {'S', 'W', 'T', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, sizeof v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xffffffffULL) throw FormatError(std::string("checkpoint: ") + what + " too large");
    return static_cast<std::uint32_t>(v);
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (n > bytes_.size() - pos_) {
            throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + " while reading " + what);
        }
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32(const char* what) {
        auto s = take(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
        return v;
    }
    double f64() {
        auto s = take(8, "tensor payload");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
        double d;
        std::memcpy(&d, &v, sizeof d);
        return d;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
    return out + "]";
}

}  // namespace

config::RunConfig Checkpoint::config() const { return config::RunConfig::parse(config_json); }

std::vector<std::uint8_t> encode(const std::string& config_json, const model::ModelState& state) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u32(out, checked_u32(config_json.size(), "config"));
    out.insert(out.end(), config_json.begin(), config_json.end());
    put_u32(out, checked_u32(state.student.size() + state.teacher.size(), "tensor count"));
    for (auto [prefix, store] : {std::pair{"student/", &state.student}, std::pair{"teacher/", &state.teacher}}) {
        for (const auto& [name, t] : *store) {
            const std::string full = std::string(prefix) + name;
            put_u32(out, checked_u32(full.size(), "tensor name"));
            out.insert(out.end(), full.begin(), full.end());
            put_u32(out, checked_u32(t.rank(), "rank"));
            for (std::size_t d : t.shape()) put_u32(out, checked_u32(d, "dimension"));
            for (double v : t.data()) put_f64(out, v);
        }
    }
    return out;
}

Checkpoint decode(std::span<const std::uint8_t> bytes) {
    Cursor c(bytes);
    auto magic = c.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw FormatError("not a checkpoint (bad magic)");
    const std::uint32_t version = c.u32("version");
    if (version != kVersion) {
        throw FormatError("checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
    }
    Checkpoint ck;
    auto cfg = c.take(c.u32("config length"), "config");
    ck.config_json.assign(cfg.begin(), cfg.end());
    const std::uint32_t count = c.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        auto nm = c.take(c.u32("name length"), "tensor name");
        std::string name(nm.begin(), nm.end());
        Shape shape(c.u32("rank"));
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = c.u32("dimension");
            numel *= d;
        }
        std::vector<double> values(numel);
        for (double& v : values) v = c.f64();
        ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!c.done()) throw FormatError("checkpoint has trailing bytes");
    return ck;
}

void save(const std::filesystem::path& file, const config::RunConfig& config, const model::ModelState& state) {
    const auto bytes = encode(config.canonical(), state);
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    const auto tmp = std::filesystem::path(file.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw FormatError("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& file) {
    if (!std::filesystem::is_regular_file(file)) throw NotFoundError("file not found: " + file.string());
    std::ifstream in(file, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + file.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Checkpoint load(const std::filesystem::path& file) {
    const auto bytes = read_bytes(file);
    try {
        return decode(bytes);
    } catch (const FormatError& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
}

model::ModelState restore(const Checkpoint& ckpt, const model::ModelConfig& model_config, double ema_decay) {
    model::ModelState state = model::ModelState::create(model_config, 0, ema_decay);
    std::map<std::string, const Tensor*> stored;
    for (const auto& [name, t] : ckpt.tensors) stored[name] = &t;

    std::vector<std::string> problems;
    for (auto [prefix, store] : {std::pair{"student/", &state.student}, std::pair{"teacher/", &state.teacher}}) {
        for (auto& [name, t] : *store) {
            const std::string full = std::string(prefix) + name;
            auto it = stored.find(full);
            if (it == stored.end()) {
                problems.push_back(full + ": missing from checkpoint, model expects " + shape_string(t.shape()));
                continue;
            }
            if (it->second->shape() != t.shape()) {
                problems.push_back(full + ": checkpoint " + shape_string(it->second->shape()) + ", model " +
                                   shape_string(t.shape()));
            } else {
                auto src = it->second->data();
                std::copy(src.begin(), src.end(), t.mutable_data().begin());
            }
            stored.erase(it);
        }
    }
    for (const auto& [name, t] : stored) problems.push_back(name + ": " + shape_string(t->shape()) + " not used by the model");
    if (!problems.empty()) {
        std::string msg = "checkpoint does not match the model architecture:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }
    return state;
}

std::string file_hash(const std::filesystem::path& file) {
    const auto bytes = read_bytes(file);
    return config::hex64(config::fnv1a({reinterpret_cast<const char*>(bytes.data()), bytes.size()}));
}

}  // namespace swt::checkpoint
