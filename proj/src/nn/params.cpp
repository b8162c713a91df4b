#include "cfsynth/nn/params.hpp"

#include "cfsynth/error.hpp"

#include <cmath>
#include <cstdio>

namespace cfs::nn {

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed) {
    return fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(values.data()),
                                                values.size() * sizeof(double)),
                 seed);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Tensor ParamStore::add(const std::string& name, const std::string& group, const Shape& shape,
                       std::vector<double> init) {
    require(!contains(name), "duplicate parameter name '" + name + "'");
    require(!group.empty(), "parameter '" + name + "' has no group");
    Tensor t = Tensor::from(shape, std::move(init), true);
    index_[name] = entries_.size();
    entries_.push_back({name, group, t});
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter '" + name + "'");
    return entries_[it->second].value;
}

const std::string& ParamStore::group_of(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter '" + name + "'");
    return entries_[it->second].group;
}

std::vector<std::string> ParamStore::groups() const {
    std::set<std::string> s;
    for (const auto& e : entries_) s.insert(e.group);
    return {s.begin(), s.end()};
}

std::size_t ParamStore::count(const std::string& group) const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.group == group ? e.value.size() : 0;
    return n;
}

std::uint64_t ParamStore::checksum(const std::string& group) const {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& e : entries_) {
        if (e.group == group) h = fnv1a(e.value.values(), h);
    }
    return h;
}

std::map<std::string, std::uint64_t> ParamStore::checksums() const {
    std::map<std::string, std::uint64_t> out;
    for (const auto& g : groups()) out[g] = checksum(g);
    return out;
}

void ParamStore::set_trainable(const std::set<std::string>& groups) {
    for (auto& e : entries_) e.value.set_requires_grad(groups.count(e.group) != 0);
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
}

void ParamStore::copy_values_from(const ParamStore& other) {
    require(other.entries_.size() == entries_.size(), "parameter stores differ in size");
    for (auto& e : entries_) {
        Tensor src = other.get(e.name);
        require(src.shape() == e.value.shape(), "parameter '" + e.name + "' shape differs");
        auto dst = e.value.mutable_values();
        std::copy(src.values().begin(), src.values().end(), dst.begin());
    }
}

std::vector<double> normal_init(std::mt19937_64& rng, std::size_t n, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

std::vector<double> he_init(std::mt19937_64& rng, std::size_t n, int fan_in) {
    return normal_init(rng, n, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

void Adam::step(ParamStore& store) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& e : store.entries()) {
        Tensor p = e.value;
        if (!p.requires_grad() || p.grad().empty()) continue;
        auto& st = state_[e.name];
        if (st.m.empty()) {
            st.m.assign(p.size(), 0.0);
            st.v.assign(p.size(), 0.0);
        }
        auto g = p.grad();
        auto w = p.mutable_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
            st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr_ * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + eps_);
        }
    }
}

}  // namespace cfs::nn
