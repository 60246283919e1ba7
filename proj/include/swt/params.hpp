#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "swt/tensor.hpp"

namespace swt {

// Named parameter tensors in insertion order. Order is part of the
// checkpoint format and of every deterministic reduction over parameters.
class ParamStore {
public:
    Tensor& add(std::string name, Tensor value);
    const Tensor& get(std::string_view name) const;
    Tensor& get(std::string_view name);
    bool contains(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    // Independent copy of every tensor (same requires_grad flags).
    ParamStore deep_copy() const;
    void set_requires_grad(bool value);
    void zero_grad();
    std::size_t total_numel() const;

    // FNV-1a over names, shapes and raw value bytes; prefix filters by name.
    std::uint64_t hash(std::string_view prefix = "") const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace swt
