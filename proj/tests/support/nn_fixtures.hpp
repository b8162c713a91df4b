#pragma once

#include "cfsynth/denoiser.hpp"
#include "cfsynth/nn/ops.hpp"
#include "cfsynth/nn/params.hpp"

#include <random>

namespace cfs::testing {

inline nn::Tensor random_tensor(std::mt19937_64& rng, const nn::Shape& shape, double stddev = 1.0,
                                bool requires_grad = false) {
    std::normal_distribution<double> n(0.0, stddev);
    std::vector<double> v(nn::numel(shape));
    for (double& x : v) x = n(rng);
    return nn::Tensor::from(shape, std::move(v), requires_grad);
}

inline diffusion::DenoiserConfig tiny_denoiser_config() {
    diffusion::DenoiserConfig c;
    c.pose_channels = 8;
    c.channels = {16, 32, 32};
    c.groups = 4;
    c.time_dim = 16;
    c.temb_dim = 32;
    c.identity_dim = 16;
    return c;
}

// Random stand-ins for every bundle element, sized for F frames of h x w latents.
inline cond::ConditioningBundle random_bundle(std::mt19937_64& rng, const diffusion::DenoiserConfig& c, int F, int h,
                                              int w, int identity_tokens = 4) {
    cond::ConditioningBundle b;
    b.pose = random_tensor(rng, {F, h, w, c.pose_channels});
    for (std::size_t l = 0; l < c.channels.size(); ++l) {
        const int hl = h >> l, wl = w >> l;
        b.fg.features.push_back(random_tensor(rng, {1, hl * wl, c.channels[l]}));
        b.fg.masks.push_back(std::vector<double>(static_cast<std::size_t>(hl * wl), 1.0));
        b.fg.heights.push_back(hl);
        b.fg.widths.push_back(wl);
        if (l + 1 < c.channels.size()) b.bg.levels.push_back(random_tensor(rng, {F, hl, wl, c.channels[l]}));
    }
    b.fg.masked = true;
    b.identity = random_tensor(rng, {1, identity_tokens, c.identity_dim});
    return b;
}

inline double max_abs_diff(const nn::Tensor& a, const nn::Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

}  // namespace cfs::testing
