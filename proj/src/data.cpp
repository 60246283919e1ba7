#include "swt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "swt/errors.hpp"

namespace swt::data {

namespace {

std::uint8_t to_pixel(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open " + file.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void ImageDataset::validate(std::size_t patch_size) const {
    if (labels.size() != images.size()) throw ConfigError(name + ": label count differs from image count");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw ConfigError(name + ": label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                              " outside [0, " + std::to_string(classes) + ")");
        }
    }
    if (images.empty()) return;
    const Image& first = images.front();
    for (const Image& im : images) {
        if (im.channels != first.channels || im.height != first.height || im.width != first.width ||
            im.pixels.size() != im.channels * im.height * im.width) {
            throw ConfigError(name + ": inconsistent image shapes");
        }
    }
    if (patch_size && (first.height % patch_size || first.width % patch_size)) {
        throw ConfigError(name + ": image " + std::to_string(first.height) + "x" + std::to_string(first.width) +
                          " not divisible by patch size " + std::to_string(patch_size));
    }
}

ImageDataset ImageDataset::subset(std::span<const std::size_t> indices) const {
    ImageDataset out;
    out.name = name;
    out.classes = classes;
    out.stats = stats;
    out.images.reserve(indices.size());
    for (std::size_t i : indices) {
        out.images.push_back(images.at(i));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

ImageDataset parse_cifar(std::span<const std::uint8_t> bytes, std::string name) {
    if (bytes.size() % kCifarRecordBytes != 0) {
        throw FormatError(name + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
                          std::to_string(kCifarRecordBytes));
    }
    ImageDataset ds;
    ds.name = std::move(name);
    ds.classes = 10;
    ds.stats = kCifarStats;
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    ds.images.reserve(n);
    ds.labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
        if (rec[0] >= 10) {
            throw FormatError(ds.name + ": record " + std::to_string(r) + " has label byte " +
                              std::to_string(rec[0]));
        }
        Image im;
        im.pixels.assign(rec + 1, rec + kCifarRecordBytes);
        ds.images.push_back(std::move(im));
        ds.labels.push_back(rec[0]);
    }
    return ds;
}

ImageDataset load_cifar(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& entry : fs::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".bin") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw FormatError(path.string() + ": no .bin batch files");
    } else if (fs::is_regular_file(path)) {
        files.push_back(path);
    } else {
        throw FormatError(path.string() + ": not found");
    }
    ImageDataset all;
    all.name = path.filename().string();
    all.classes = 10;
    all.stats = kCifarStats;
    for (const auto& f : files) {
        auto bytes = read_file(f);
        ImageDataset part = parse_cifar(bytes, f.filename().string());
        std::move(part.images.begin(), part.images.end(), std::back_inserter(all.images));
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
    return all;
}

std::vector<std::uint8_t> encode_cifar(const ImageDataset& dataset) {
    std::vector<std::uint8_t> out;
    out.reserve(dataset.size() * kCifarRecordBytes);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Image& im = dataset.images[i];
        if (im.channels != 3 || im.height != 32 || im.width != 32) {
            throw FormatError("encode_cifar: image " + std::to_string(i) + " is not 3x32x32");
        }
        if (dataset.labels[i] < 0 || dataset.labels[i] >= 10) {
            throw FormatError("encode_cifar: label " + std::to_string(dataset.labels[i]) + " does not fit");
        }
        out.push_back(static_cast<std::uint8_t>(dataset.labels[i]));
        out.insert(out.end(), im.pixels.begin(), im.pixels.end());
    }
    return out;
}

void write_cifar(const ImageDataset& dataset, const std::filesystem::path& file) {
    auto bytes = encode_cifar(dataset);
    std::ofstream out(file, std::ios::binary);
    if (!out) throw FormatError("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ImageDataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("synth_blobs: need at least 2 classes");
    if (size < 4) throw ConfigError("synth_blobs: image size too small");
    Rng rng(seed, Stream::data);

    struct Template {
        double cx, cy, sigma;
        std::array<double, 3> mix;
    };
    std::vector<Template> templates(classes);
    const double s = static_cast<double>(size);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t c = 0; c < classes; ++c) {
        Template& t = templates[c];
        double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        double radius = s * rng.uniform(0.2, 0.3);
        t.cx = s / 2.0 + radius * std::cos(angle);
        t.cy = s / 2.0 + radius * std::sin(angle);
        t.sigma = s * rng.uniform(0.08, 0.16);
        for (double& m : t.mix) m = rng.uniform(-1.0, 1.0);
        // Emphasize one channel per class so colour is informative too.
        t.mix[c % 3] = 1.0 + rng.uniform(0.0, 0.5);
    }

    ImageDataset ds;
    ds.name = "synth_blobs";
    ds.classes = classes;
    ds.stats = kSyntheticStats;
    ds.images.reserve(classes * per_class);
    for (std::size_t i = 0; i < classes * per_class; ++i) {
        const int label = static_cast<int>(i % classes);
        const Template& t = templates[static_cast<std::size_t>(label)];
        const double cx = t.cx + rng.uniform(-2.0, 2.0);
        const double cy = t.cy + rng.uniform(-2.0, 2.0);
        const double amp = 90.0 * rng.uniform(0.8, 1.2);
        Image im;
        im.height = im.width = size;
        im.pixels.resize(3 * size * size);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx;
                    const double dy = static_cast<double>(y) + 0.5 - cy;
                    const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * t.sigma * t.sigma));
                    im.at(c, y, x) = to_pixel(128.0 + amp * t.mix[c] * blob + rng.normal(0.0, 20.0));
                }
        ds.images.push_back(std::move(im));
        ds.labels.push_back(label);
    }
    return ds;
}

// ---- augmentation --------------------------------------------------------

void AugmentPolicy::validate() const {
    if (!(magnitude >= 0.0 && magnitude <= 10.0)) {
        throw ConfigError("augment magnitude " + std::to_string(magnitude) + " outside [0, 10]");
    }
    if (num_ops > kAugmentOps.size()) {
        throw ConfigError("augment num_ops " + std::to_string(num_ops) + " exceeds " +
                          std::to_string(kAugmentOps.size()) + " available ops");
    }
}

Image apply_augment_op(const Image& image, AugmentOp op, double strength, Rng& rng) {
    Image out = image;
    const std::size_t h = image.height, w = image.width;
    switch (op) {
        case AugmentOp::horizontal_flip:
            for (std::size_t c = 0; c < image.channels; ++c)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
            break;
        case AugmentOp::crop_with_pad: {
            const auto pad = static_cast<long>(std::lround(4.0 * strength));
            const long dy = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad;
            const long dx = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * pad + 1))) - pad;
            for (std::size_t c = 0; c < image.channels; ++c)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(x) + dx;
                        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
                        out.at(c, y, x) = inside ? image.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) : 0;
                    }
            break;
        }
        case AugmentOp::brightness: {
            const double delta = rng.uniform(-64.0, 64.0) * strength;
            for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = to_pixel(image.pixels[i] + delta);
            break;
        }
        case AugmentOp::contrast: {
            const double factor = 1.0 + rng.uniform(-0.5, 0.5) * strength;
            double m = 0.0;
            for (std::uint8_t p : image.pixels) m += p;
            m /= static_cast<double>(image.pixels.size());
            for (std::size_t i = 0; i < out.pixels.size(); ++i)
                out.pixels[i] = to_pixel(m + factor * (image.pixels[i] - m));
            break;
        }
        case AugmentOp::rotate: {
            const double angle = rng.uniform(-30.0, 30.0) * strength * std::numbers::pi / 180.0;
            const double ca = std::cos(angle), sa = std::sin(angle);
            const double cy = static_cast<double>(h) / 2.0, cx = static_cast<double>(w) / 2.0;
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    // inverse map output pixel centre to source
                    const double ox = static_cast<double>(x) + 0.5 - cx, oy = static_cast<double>(y) + 0.5 - cy;
                    const double sx = ca * ox + sa * oy + cx, sy = -sa * ox + ca * oy + cy;
                    const long ix = static_cast<long>(std::floor(sx)), iy = static_cast<long>(std::floor(sy));
                    const bool inside = ix >= 0 && iy >= 0 && ix < static_cast<long>(w) && iy < static_cast<long>(h);
                    for (std::size_t c = 0; c < image.channels; ++c)
                        out.at(c, y, x) =
                            inside ? image.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) : 0;
                }
            break;
        }
    }
    return out;
}

Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
    policy.validate();
    if (policy.num_ops == 0) return image;
    std::vector<AugmentOp> ops(kAugmentOps.begin(), kAugmentOps.end());
    rng.shuffle(ops);
    const double strength = policy.magnitude / 10.0;
    Image out = image;
    for (std::size_t i = 0; i < policy.num_ops; ++i) out = apply_augment_op(out, ops[i], strength, rng);
    return out;
}

// ---- masking -------------------------------------------------------------

std::vector<std::uint8_t> MaskSpec::flags() const {
    std::vector<std::uint8_t> f(token_count, 0);
    for (std::size_t i : indices) f[i] = 1;
    return f;
}

MaskSpec random_mask(std::size_t token_count, double ratio, Rng& rng) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw ConfigError("mask ratio " + std::to_string(ratio) + " must lie in (0, 1)");
    }
    const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(token_count)));
    if (count == 0 || count >= token_count) {
        throw ConfigError("mask ratio " + std::to_string(ratio) + " over " + std::to_string(token_count) +
                          " tokens masks " + std::to_string(count) + " tokens");
    }
    std::vector<std::size_t> pool(token_count);
    for (std::size_t i = 0; i < token_count; ++i) pool[i] = i;
    // partial Fisher-Yates: first `count` slots are a uniform sample
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(token_count - i));
        std::swap(pool[i], pool[j]);
    }
    MaskSpec spec;
    spec.token_count = token_count;
    spec.ratio = ratio;
    spec.indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(spec.indices.begin(), spec.indices.end());
    return spec;
}

// ---- corruption ----------------------------------------------------------

std::string_view to_string(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
        case CorruptionKind::box_blur: return "box_blur";
        case CorruptionKind::brightness: return "brightness";
        case CorruptionKind::contrast: return "contrast";
        case CorruptionKind::pixelate: return "pixelate";
    }
    return "unknown";
}

CorruptionKind parse_corruption_kind(std::string_view name) {
    for (CorruptionKind k : kCorruptionKinds) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown corruption kind '" + std::string(name) + "'");
}

double severity_parameter(CorruptionKind kind, int severity) {
    if (severity < 1 || severity > 5) throw ConfigError("severity " + std::to_string(severity) + " outside 1..5");
    static constexpr double noise[] = {8, 16, 24, 32, 40};
    static constexpr double blur[] = {0.5, 1, 1.5, 2, 3};
    static constexpr double bright[] = {16, 32, 48, 64, 80};
    static constexpr double contrast[] = {0.2, 0.35, 0.5, 0.65, 0.8};
    static constexpr double pixel[] = {2, 3, 4, 5, 6};
    const auto i = static_cast<std::size_t>(severity - 1);
    switch (kind) {
        case CorruptionKind::gaussian_noise: return noise[i];
        case CorruptionKind::box_blur: return blur[i];
        case CorruptionKind::brightness: return bright[i];
        case CorruptionKind::contrast: return contrast[i];
        case CorruptionKind::pixelate: return pixel[i];
    }
    throw ConfigError("unknown corruption kind");
}

void CorruptionSpec::validate() const { severity_parameter(kind, severity); }

Image corrupt_with_parameter(const Image& image, CorruptionKind kind, double parameter, std::uint64_t seed) {
    if (parameter < 0.0) throw ConfigError("corruption parameter must be non-negative");
    Image out = image;
    const std::size_t h = image.height, w = image.width;
    switch (kind) {
        case CorruptionKind::gaussian_noise: {
            Rng rng(seed, Stream::corruption);
            for (std::size_t i = 0; i < out.pixels.size(); ++i)
                out.pixels[i] = to_pixel(image.pixels[i] + parameter * rng.normal());
            break;
        }
        case CorruptionKind::box_blur: {
            // Separable box with fractional radius r: full weight out to
            // floor(r), weight frac(r) on the next ring; edges clamp.
            const auto full = static_cast<long>(std::floor(parameter));
            const double frac = parameter - static_cast<double>(full);
            const long reach = full + (frac > 0.0 ? 1 : 0);
            auto weight = [&](long off) { return std::abs(off) <= full ? 1.0 : frac; };
            std::vector<double> tmp(image.pixels.size());
            for (std::size_t c = 0; c < image.channels; ++c) {
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        double s = 0.0, ws = 0.0;
                        for (long o = -reach; o <= reach; ++o) {
                            const long sx = std::clamp(static_cast<long>(x) + o, 0L, static_cast<long>(w) - 1);
                            s += weight(o) * image.at(c, y, static_cast<std::size_t>(sx));
                            ws += weight(o);
                        }
                        tmp[(c * h + y) * w + x] = s / ws;
                    }
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        double s = 0.0, ws = 0.0;
                        for (long o = -reach; o <= reach; ++o) {
                            const long sy = std::clamp(static_cast<long>(y) + o, 0L, static_cast<long>(h) - 1);
                            s += weight(o) * tmp[(c * h + static_cast<std::size_t>(sy)) * w + x];
                            ws += weight(o);
                        }
                        out.at(c, y, x) = to_pixel(s / ws);
                    }
            }
            break;
        }
        case CorruptionKind::brightness:
            for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = to_pixel(image.pixels[i] + parameter);
            break;
        case CorruptionKind::contrast: {
            double m = 0.0;
            for (std::uint8_t p : image.pixels) m += p;
            m /= static_cast<double>(image.pixels.size());
            for (std::size_t i = 0; i < out.pixels.size(); ++i)
                out.pixels[i] = to_pixel(m + (1.0 - parameter) * (image.pixels[i] - m));
            break;
        }
        case CorruptionKind::pixelate: {
            const auto block = static_cast<std::size_t>(std::max(1L, std::lround(parameter)));
            if (block == 1) break;
            for (std::size_t c = 0; c < image.channels; ++c)
                for (std::size_t by = 0; by < h; by += block)
                    for (std::size_t bx = 0; bx < w; bx += block) {
                        const std::size_t ey = std::min(h, by + block), ex = std::min(w, bx + block);
                        double s = 0.0;
                        for (std::size_t y = by; y < ey; ++y)
                            for (std::size_t x = bx; x < ex; ++x) s += image.at(c, y, x);
                        const std::uint8_t v = to_pixel(s / static_cast<double>((ey - by) * (ex - bx)));
                        for (std::size_t y = by; y < ey; ++y)
                            for (std::size_t x = bx; x < ex; ++x) out.at(c, y, x) = v;
                    }
            break;
        }
    }
    return out;
}

Image corrupt(const Image& image, const CorruptionSpec& spec, std::uint64_t seed) {
    return corrupt_with_parameter(image, spec.kind, severity_parameter(spec.kind, spec.severity), seed);
}

PerturbationSequence perturb_sequence(const Image& image, CorruptionKind kind, std::size_t frames,
                                      std::size_t base_index, std::uint64_t seed) {
    if (frames < 2) throw ConfigError("perturbation sequence needs at least 2 frames, got " + std::to_string(frames));
    PerturbationSequence seq;
    seq.kind = kind;
    seq.base_index = base_index;
    const double top = severity_parameter(kind, 3);
    for (std::size_t t = 0; t < frames; ++t) {
        const double p = top * static_cast<double>(t) / static_cast<double>(frames - 1);
        seq.frames.push_back(t == 0 ? image : corrupt_with_parameter(image, kind, p, seed));
    }
    return seq;
}

}  // namespace swt::data
