#pragma once

#include "cfsynth/nn/tensor.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace cfs::nn {

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t seed = 14695981039346656037ull);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t v);

struct ParamEntry {
    std::string name;
    std::string group;
    Tensor value;
};

// Named parameters, each assigned to exactly one group.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;

    Tensor add(const std::string& name, const std::string& group, const Shape& shape, std::vector<double> init);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor get(const std::string& name) const;
    const std::string& group_of(const std::string& name) const;
    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<std::string> groups() const;
    std::size_t count(const std::string& group) const;

    std::uint64_t checksum(const std::string& group) const;
    std::map<std::string, std::uint64_t> checksums() const;

    // Enables gradients exactly for parameters in `groups`.
    void set_trainable(const std::set<std::string>& groups);
    void zero_grad();

    // Copies values by name from `other`; names must match exactly.
    void copy_values_from(const ParamStore& other);

private:
    std::vector<ParamEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Initializers.
std::vector<double> normal_init(std::mt19937_64& rng, std::size_t n, double stddev);
std::vector<double> he_init(std::mt19937_64& rng, std::size_t n, int fan_in);

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Updates every parameter that requires a gradient and has one.
    void step(ParamStore& store);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    long steps() const { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, Moments> state_;
};

}  // namespace cfs::nn
