#pragma once

#include "cfsynth/nn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

// Noise schedule, forward process, and the deterministic DDIM sampler.
namespace cfs::diffusion {

enum class ScheduleKind { linear_beta, cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

struct NoiseSchedule {
    int T = 0;
    std::vector<double> alphas_bar;  // alphas_bar[t - 1] for t = 1..T

    // 1 at t = 0, alphas_bar[t - 1] otherwise.
    double alpha_bar(int t) const;
    // Checks: strictly decreasing, every value in (0, 1].
    void validate() const;
    static NoiseSchedule from_alphas_bar(std::vector<double> alphas_bar);
};

// linear_beta: betas evenly spaced from beta_start to beta_end;
// cosine: the squared-cosine alpha-bar curve with offset 0.008.
NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start = 1e-4, double beta_end = 0.02);

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
nn::Tensor forward_diffuse(const nn::Tensor& z0, int t, const nn::Tensor& eps, const NoiseSchedule& schedule);
std::vector<double> forward_diffuse(const std::vector<double>& z0, int t, const std::vector<double>& eps,
                                    const NoiseSchedule& schedule);

// Sequence of sampler timesteps, highest first, evenly spaced with the
// first one at T.
std::vector<int> sampler_timesteps(int T, int steps);

struct SamplerConfig {
    int steps = 20;
    double eta = 0.0;  // 0 is deterministic DDIM
    std::uint64_t seed = 0;
};

// Noise prediction for a batch at timestep t.
using NoisePredictor = std::function<nn::Tensor(const nn::Tensor& z_t, int t)>;

// Reverse trajectory from z_T; returns the final z_0 estimate. With
// steps == 0 the input is returned unchanged.
nn::Tensor ddim_sample(const nn::Tensor& z_T, const NoisePredictor& predict, const NoiseSchedule& schedule,
                       const SamplerConfig& config);

}  // namespace cfs::diffusion
