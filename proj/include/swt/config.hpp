#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "swt/data.hpp"
#include "swt/model.hpp"
#include "swt/train.hpp"

namespace swt::config {

// Dataset specs are either a path to CIFAR-format binaries (file or
// directory) or "synth:classes=C,count=N[,seed=S][,offset=K][,size=P]".
// A synth spec takes items [offset, offset + count) of one seeded blob
// stream, so train and test splits share class templates when they share a
// seed. `size` defaults to the model image size.
struct DataConfig {
    std::string train = "synth:classes=3,count=500,seed=0";
    std::string test = "synth:classes=3,count=200,seed=0,offset=500";

    bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    DataConfig data;
    std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

    // Every field, keys sorted.
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys and mistyped values
    // raise ConfigError naming the dotted key.
    static RunConfig from_json(const nlohmann::json& doc);
    static RunConfig parse(const std::string& text);

    std::string canonical() const;   // compact dump of to_json()
    std::string hash() const;        // 16 hex digits of FNV-1a over canonical()
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

RunConfig load_config(const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

data::ImageDataset load_dataset(const std::string& spec, std::size_t image_size);

}  // namespace swt::config
