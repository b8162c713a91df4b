#include "cfsynth/nn/layers.hpp"

#include <cmath>

namespace cfs::nn {

namespace {

std::vector<double> init_values(std::mt19937_64& rng, std::size_t n, int fan_in, int fan_out, Init init) {
    switch (init) {
        case Init::he:
            return he_init(rng, n, fan_in);
        case Init::xavier:
            return normal_init(rng, n, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
        case Init::zero:
            break;
    }
    return std::vector<double>(n, 0.0);
}

}  // namespace

Conv make_conv(ParamStore& store, std::mt19937_64& rng, const std::string& name, const std::string& group, int cin,
               int cout, int kernel, int stride, Init init) {
    Conv c;
    const int fan_in = kernel * kernel * cin;
    c.w = store.add(name + ".w", group, {fan_in, cout},
                    init_values(rng, static_cast<std::size_t>(fan_in) * cout, fan_in, cout, init));
    c.b = store.add(name + ".b", group, {cout}, std::vector<double>(static_cast<std::size_t>(cout), 0.0));
    c.kernel = kernel;
    c.stride = stride;
    c.pad = kernel / 2;
    return c;
}

Linear make_linear(ParamStore& store, std::mt19937_64& rng, const std::string& name, const std::string& group,
                   int in, int out, bool bias, Init init) {
    Linear l;
    l.w = store.add(name + ".w", group, {in, out}, init_values(rng, static_cast<std::size_t>(in) * out, in, out, init));
    if (bias) l.b = store.add(name + ".b", group, {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
    return l;
}

Norm make_norm(ParamStore& store, const std::string& name, const std::string& group, int channels, int groups) {
    Norm n;
    n.gamma = store.add(name + ".gamma", group, {channels}, std::vector<double>(static_cast<std::size_t>(channels), 1.0));
    n.beta = store.add(name + ".beta", group, {channels}, std::vector<double>(static_cast<std::size_t>(channels), 0.0));
    n.groups = groups;
    return n;
}

}  // namespace cfs::nn
