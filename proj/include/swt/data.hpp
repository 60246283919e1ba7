#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "swt/rng.hpp"

namespace swt::data {

// Per-channel standardization applied after scaling pixels to [0, 1].
struct ChannelStats {
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> std{0.25, 0.25, 0.25};
};

inline constexpr ChannelStats kSyntheticStats{};
inline constexpr ChannelStats kCifarStats{{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};

// C x H x W bytes, planar (all of channel 0, then channel 1, ...), rows
// row-major within a plane.
struct Image {
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
    std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    bool operator==(const Image&) const = default;
};

struct ImageDataset {
    std::string name;
    std::size_t classes = 0;
    std::vector<Image> images;
    std::vector<int> labels;
    ChannelStats stats = kSyntheticStats;

    std::size_t size() const { return images.size(); }
    // Throws ConfigError when labels or shapes are inconsistent, or when
    // spatial dims are not divisible by patch_size (skipped when 0).
    void validate(std::size_t patch_size = 0) const;
    ImageDataset subset(std::span<const std::size_t> indices) const;
};

// CIFAR-10 binary layout: 3073-byte records, 1 label byte then 1024 R,
// 1024 G, 1024 B bytes, each plane row-major 32x32.
inline constexpr std::size_t kCifarRecordBytes = 3073;

// `path` is a single .bin file or a directory; in a directory every *.bin
// file is read in lexicographic order.
ImageDataset load_cifar(const std::filesystem::path& path);
ImageDataset parse_cifar(std::span<const std::uint8_t> bytes, std::string name = "cifar");
std::vector<std::uint8_t> encode_cifar(const ImageDataset& dataset);
void write_cifar(const ImageDataset& dataset, const std::filesystem::path& file);

/// Seeded Gaussian-blob classes. Each class has its own blob centre, width
/// and RGB mix over a mid-grey background; every sample jitters the centre
/// by up to 2 px, scales the amplitude by [0.8, 1.2] and adds N(0, 20^2)
/// pixel noise. Labels cycle 0, 1, ..., classes-1 so any prefix is balanced.
ImageDataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed);

// ---- augmentation --------------------------------------------------------

enum class AugmentOp { horizontal_flip, crop_with_pad, brightness, contrast, rotate };
inline constexpr std::array<AugmentOp, 5> kAugmentOps{AugmentOp::horizontal_flip, AugmentOp::crop_with_pad,
                                                     AugmentOp::brightness, AugmentOp::contrast,
                                                     AugmentOp::rotate};

/// num_ops distinct ops drawn without replacement, each at strength
/// magnitude/10 of its full range:
///   horizontal_flip  mirror columns (strength ignored)
///   crop_with_pad    zero-pad by round(4 s) px, crop back at a random offset
///   brightness       add a uniform offset in [-64 s, 64 s]
///   contrast         scale around the image mean by 1 + u, u in [-0.5 s, 0.5 s]
///   rotate           nearest-neighbour rotation by an angle in [-30 s, 30 s] deg
struct AugmentPolicy {
    std::size_t num_ops = 2;
    double magnitude = 9.0;

    void validate() const;
    bool operator==(const AugmentPolicy&) const = default;
};

Image apply_augment_op(const Image& image, AugmentOp op, double strength, Rng& rng);
Image augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

// ---- masking -------------------------------------------------------------

struct MaskSpec {
    std::size_t token_count = 0;
    std::vector<std::size_t> indices;  // strictly increasing, < token_count
    double ratio = 0.0;

    // One flag per token.
    std::vector<std::uint8_t> flags() const;
};

// Uniform sample of round(ratio * L) distinct token indices.
MaskSpec random_mask(std::size_t token_count, double ratio, Rng& rng);

// ---- corruption and perturbation -----------------------------------------

enum class CorruptionKind { gaussian_noise, box_blur, brightness, contrast, pixelate };
inline constexpr std::array<CorruptionKind, 5> kCorruptionKinds{
    CorruptionKind::gaussian_noise, CorruptionKind::box_blur, CorruptionKind::brightness,
    CorruptionKind::contrast, CorruptionKind::pixelate};

std::string_view to_string(CorruptionKind kind);
CorruptionKind parse_corruption_kind(std::string_view name);  // ConfigError if unknown

/// Severity tables (index = severity - 1); parameter 0 is the identity.
///   gaussian_noise  noise std on the 0-255 scale   8, 16, 24, 32, 40
///   box_blur        box radius in px (fractional)  0.5, 1, 1.5, 2, 3
///   brightness      added offset                   16, 32, 48, 64, 80
///   contrast        amount a, pixel' = m + (1-a)(pixel - m)  0.2, 0.35, 0.5, 0.65, 0.8
///   pixelate        block size, rounded to int     2, 3, 4, 5, 6
double severity_parameter(CorruptionKind kind, int severity);

inline constexpr std::uint64_t kCorruptionSeed = 0x5357544300000001ULL;

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    int severity = 1;

    void validate() const;
};

Image corrupt_with_parameter(const Image& image, CorruptionKind kind, double parameter,
                             std::uint64_t seed = kCorruptionSeed);
Image corrupt(const Image& image, const CorruptionSpec& spec, std::uint64_t seed = kCorruptionSeed);

struct PerturbationSequence {
    std::vector<Image> frames;
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    std::size_t base_index = 0;
};

// Frame t uses parameter severity_parameter(kind, 3) * t / (T - 1); frame 0
// is the clean image. Noise-type perturbations reuse one noise field.
PerturbationSequence perturb_sequence(const Image& image, CorruptionKind kind, std::size_t frames,
                                      std::size_t base_index = 0, std::uint64_t seed = kCorruptionSeed);

}  // namespace swt::data
