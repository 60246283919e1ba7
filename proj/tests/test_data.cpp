#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "swt/data.hpp"
#include "swt/errors.hpp"

using namespace swt;
using namespace swt::data;

namespace {

Image constant_image(std::uint8_t v, std::size_t size = 32) {
    Image im;
    im.height = im.width = size;
    im.pixels.assign(3 * size * size, v);
    return im;
}

double pixel_std(const Image& im, const Image& base) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < im.pixels.size(); ++i) {
        double d = static_cast<double>(im.pixels[i]) - base.pixels[i];
        s += d;
        s2 += d * d;
    }
    const double n = static_cast<double>(im.pixels.size());
    return std::sqrt(s2 / n - (s / n) * (s / n));
}

std::uint64_t checksum(const Image& im) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::uint8_t p : im.pixels) {
        h ^= p;
        h *= 1099511628211ULL;
    }
    return h;
}

std::filesystem::path temp_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("load_cifar parses records and round-trips bytes") {
    std::vector<std::uint8_t> bytes(2 * kCifarRecordBytes);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>((i * 37) % 251);
    bytes[0] = 3;
    bytes[kCifarRecordBytes] = 9;
    auto dir = temp_dir("swt_cifar_ok");
    {
        std::ofstream out(dir / "data_batch_1.bin", std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    ImageDataset ds = load_cifar(dir);
    CHECK(ds.size() == 2);
    CHECK(ds.images[0].channels == 3);
    CHECK(ds.images[0].height == 32);
    CHECK(ds.images[0].width == 32);
    CHECK(ds.labels == std::vector<int>{3, 9});
    // red plane first, then green: pixel (c=1, y=0, x=0) is byte 1 + 1024
    CHECK(ds.images[0].at(1, 0, 0) == bytes[1 + 1024]);
    CHECK(ds.images[1].at(2, 31, 31) == bytes[2 * kCifarRecordBytes - 1]);
    CHECK(encode_cifar(ds) == bytes);
}

TEST_CASE("load_cifar rejects truncated files and bad labels") {
    std::vector<std::uint8_t> truncated(3072, 0);
    CHECK_THROWS_AS(parse_cifar(truncated), FormatError);

    std::vector<std::uint8_t> bad(kCifarRecordBytes, 0);
    bad[0] = 0xFF;
    try {
        parse_cifar(bad);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("record 0") != std::string::npos);
    }
    CHECK_THROWS_AS(load_cifar("/nonexistent/swt/cifar"), FormatError);
}

TEST_CASE("synthetic datasets serialize to the CIFAR layout") {
    ImageDataset ds = synth_blobs(3, 4, 32, 11);
    auto dir = temp_dir("swt_cifar_synth");
    write_cifar(ds, dir / "synth.bin");
    ImageDataset back = load_cifar(dir / "synth.bin");
    CHECK(back.labels == ds.labels);
    CHECK(back.images == ds.images);
}

TEST_CASE("synth_blobs construction and determinism") {
    ImageDataset ds = synth_blobs(3, 10, 32, 7);
    CHECK(ds.size() == 30);
    std::array<int, 3> counts{};
    for (int l : ds.labels) ++counts[static_cast<std::size_t>(l)];
    CHECK(counts == std::array<int, 3>{10, 10, 10});
    ImageDataset again = synth_blobs(3, 10, 32, 7);
    CHECK(again.images == ds.images);
    CHECK(again.labels == ds.labels);
    CHECK_NOTHROW(ds.validate(8));
    CHECK_THROWS_AS(ds.validate(5), ConfigError);
}

TEST_CASE("synth_blobs classes are separable by a nearest-centroid classifier") {
    ImageDataset ds = synth_blobs(2, 200, 32, 1);
    const std::size_t dim = 3 * 32 * 32;
    // train on the first half, test on the second
    std::vector<std::vector<double>> centroid(2, std::vector<double>(dim, 0.0));
    std::array<int, 2> n{};
    const std::size_t half = ds.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        auto l = static_cast<std::size_t>(ds.labels[i]);
        ++n[l];
        for (std::size_t k = 0; k < dim; ++k) centroid[l][k] += ds.images[i].pixels[k];
    }
    for (std::size_t l = 0; l < 2; ++l)
        for (double& v : centroid[l]) v /= n[l];
    std::size_t correct = 0;
    for (std::size_t i = half; i < ds.size(); ++i) {
        double best = 1e300;
        int arg = -1;
        for (std::size_t l = 0; l < 2; ++l) {
            double d = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                double diff = ds.images[i].pixels[k] - centroid[l][k];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = static_cast<int>(l);
            }
        }
        correct += arg == ds.labels[i] ? 1 : 0;
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(ds.size() - half) >= 0.9);
}

TEST_CASE("augment") {
    ImageDataset ds = synth_blobs(3, 1, 32, 4);
    const Image& base = ds.images[0];
    Rng rng(1, Stream::augment);
    CHECK(augment(base, AugmentPolicy{0, 9.0}, rng) == base);

    Image flipped = apply_augment_op(base, AugmentOp::horizontal_flip, 1.0, rng);
    CHECK(flipped != base);
    CHECK(apply_augment_op(flipped, AugmentOp::horizontal_flip, 1.0, rng) == base);

    Rng a(2024, Stream::augment), b(2024, Stream::augment);
    Image out_a = augment(base, AugmentPolicy{2, 9.0}, a);
    Image out_b = augment(base, AugmentPolicy{2, 9.0}, b);
    CHECK(out_a == out_b);
    // Golden value recorded from this implementation under the fixed seed.
    CHECK(checksum(out_a) == 15645848134562499312ULL);

    CHECK_THROWS_AS(augment(base, AugmentPolicy{1, 10.5}, rng), ConfigError);
    CHECK_THROWS_AS(augment(base, AugmentPolicy{1, -1.0}, rng), ConfigError);

    for (AugmentOp op : kAugmentOps) {
        Image out = apply_augment_op(base, op, 0.7, rng);
        CHECK(out.pixels.size() == base.pixels.size());
    }
}

TEST_CASE("random_mask counts and rounding") {
    Rng rng(3, Stream::mask);
    CHECK(random_mask(4, 0.5, rng).indices.size() == 2);
    MaskSpec m = random_mask(64, 0.6, rng);
    CHECK(m.indices.size() == 38);
    for (std::size_t i = 1; i < m.indices.size(); ++i) CHECK(m.indices[i - 1] < m.indices[i]);
    CHECK(m.indices.back() < 64);
    CHECK_THROWS_AS(random_mask(4, 0.1, rng), ConfigError);
    CHECK_THROWS_AS(random_mask(4, 0.95, rng), ConfigError);
    CHECK_THROWS_AS(random_mask(4, 0.0, rng), ConfigError);
    CHECK_THROWS_AS(random_mask(4, 1.0, rng), ConfigError);
}

TEST_CASE("random_mask is uniform over indices") {
    Rng rng(99, Stream::mask);
    std::array<int, 10> counts{};
    const int draws = 10000;
    for (int d = 0; d < draws; ++d)
        for (std::size_t i : random_mask(10, 0.5, rng).indices) ++counts[i];
    double chi2 = 0.0;
    for (int c : counts) {
        CHECK(std::abs(c - 5000) <= 150);
        chi2 += (c - 5000.0) * (c - 5000.0) / 5000.0;
    }
    // chi-square critical value, 9 degrees of freedom, alpha = 0.001
    CHECK(chi2 < 27.877);
}

TEST_CASE("corrupt") {
    Image grey = constant_image(128);
    Image noisy = corrupt(grey, CorruptionSpec{CorruptionKind::gaussian_noise, 1});
    CHECK(std::abs(pixel_std(noisy, grey) - 8.0) <= 1.0);

    Image flat = constant_image(77);
    for (int s = 1; s <= 5; ++s) CHECK(corrupt(flat, CorruptionSpec{CorruptionKind::box_blur, s}) == flat);

    ImageDataset ds = synth_blobs(2, 1, 32, 5);
    Image once = corrupt(ds.images[0], CorruptionSpec{CorruptionKind::pixelate, 5});
    CHECK(corrupt(once, CorruptionSpec{CorruptionKind::pixelate, 5}) == once);

    CHECK_THROWS_AS(parse_corruption_kind("fog"), ConfigError);
    CHECK_THROWS_AS(corrupt(grey, CorruptionSpec{CorruptionKind::contrast, 6}), ConfigError);
    CHECK(parse_corruption_kind("box_blur") == CorruptionKind::box_blur);
}

TEST_CASE("corruptions keep shape, stay deterministic, and parameter 0 is the identity") {
    ImageDataset ds = synth_blobs(2, 2, 32, 6);
    for (CorruptionKind k : kCorruptionKinds) {
        CAPTURE(to_string(k));
        for (int s = 1; s <= 5; ++s) {
            Image a = corrupt(ds.images[1], CorruptionSpec{k, s});
            CHECK(a.pixels.size() == ds.images[1].pixels.size());
            CHECK(a.height == 32);
            CHECK(a == corrupt(ds.images[1], CorruptionSpec{k, s}));
        }
        CHECK(corrupt_with_parameter(ds.images[1], k, 0.0) == ds.images[1]);
    }
}

TEST_CASE("perturb_sequence") {
    ImageDataset ds = synth_blobs(2, 1, 32, 8);
    PerturbationSequence two = perturb_sequence(ds.images[0], CorruptionKind::contrast, 2);
    REQUIRE(two.frames.size() == 2);
    CHECK(two.frames[0] == ds.images[0]);
    CHECK(two.frames[1] == corrupt(ds.images[0], CorruptionSpec{CorruptionKind::contrast, 3}));

    Image flat = constant_image(200);
    PerturbationSequence blur = perturb_sequence(flat, CorruptionKind::box_blur, 6);
    for (const Image& f : blur.frames) CHECK(f == flat);

    Image grey = constant_image(128);
    PerturbationSequence noise = perturb_sequence(grey, CorruptionKind::gaussian_noise, 5);
    const double expected[] = {0, 6, 12, 18, 24};
    for (std::size_t t = 0; t < 5; ++t) CHECK(std::abs(pixel_std(noise.frames[t], grey) - expected[t]) <= 1.0);

    CHECK_THROWS_AS(perturb_sequence(grey, CorruptionKind::brightness, 1), ConfigError);
}
