#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace swt {

// Independent stream ids so that init, data, masking and augmentation never
// share a sequence.
enum class Stream : std::uint64_t {
    init = 1,
    data = 2,
    mask = 3,
    augment = 4,
    corruption = 5,
    negatives = 6,
    shuffle = 7,
    subsample = 8,
    test = 99,
};

/// PCG32 (XSH-RR output, 64-bit LCG state). The (seed, stream) pair fully
/// determines the sequence; all derived draws (uniform doubles, normals,
/// bounded integers) use only integer arithmetic and IEEE-exact operations,
/// so sequences are identical across platforms.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream);
    Rng(std::uint64_t seed, Stream stream) : Rng(seed, static_cast<std::uint64_t>(stream)) {}

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; caches the second variate.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }
    template <typename T>
    void shuffle(std::vector<T>& items) {
        shuffle(std::span<T>(items));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
    std::uint64_t seed_;
    std::uint64_t stream_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derive a child seed deterministically (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace swt
