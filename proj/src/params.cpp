#include "swt/params.hpp"

#include <cstring>

#include "swt/errors.hpp"

namespace swt {

namespace {

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

}  // namespace

Tensor& ParamStore::add(std::string name, Tensor value) {
    if (contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.back().second;
}

const Tensor& ParamStore::get(std::string_view name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    throw ContractError("unknown parameter '" + std::string(name) + "'");
}

Tensor& ParamStore::get(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
}

bool ParamStore::contains(std::string_view name) const {
    for (const auto& entry : entries_) {
        if (entry.first == name) return true;
    }
    return false;
}

ParamStore ParamStore::deep_copy() const {
    ParamStore out;
    for (const auto& [n, t] : entries_) out.add(n, t.clone());
    return out;
}

void ParamStore::set_requires_grad(bool value) {
    for (auto& entry : entries_) entry.second.set_requires_grad(value);
}

void ParamStore::zero_grad() {
    for (auto& entry : entries_) entry.second.zero_grad();
}

std::size_t ParamStore::total_numel() const {
    std::size_t n = 0;
    for (const auto& entry : entries_) n += entry.second.numel();
    return n;
}

std::uint64_t ParamStore::hash(std::string_view prefix) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [n, t] : entries_) {
        if (n.compare(0, prefix.size(), prefix) != 0) continue;
        fnv_bytes(h, n.data(), n.size());
        for (std::size_t d : t.shape()) {
            std::uint64_t v = d;
            fnv_bytes(h, &v, sizeof v);
        }
        fnv_bytes(h, t.data().data(), t.numel() * sizeof(double));
    }
    return h;
}

}  // namespace swt
