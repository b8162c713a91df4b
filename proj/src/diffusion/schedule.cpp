#include "cfsynth/diffusion.hpp"

#include "cfsynth/error.hpp"
#include "cfsynth/nn/ops.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace cfs::diffusion {

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear" || name == "linear-beta" || name == "linear_beta") return ScheduleKind::linear_beta;
    if (name == "cosine") return ScheduleKind::cosine;
    reject("unknown noise schedule '" + name + "' (expected linear-beta or cosine)");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::cosine ? "cosine" : "linear-beta"; }

double NoiseSchedule::alpha_bar(int t) const {
    require(t >= 0 && t <= T, "timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    return t == 0 ? 1.0 : alphas_bar[static_cast<std::size_t>(t - 1)];
}

void NoiseSchedule::validate() const {
    require(T >= 1 && alphas_bar.size() == static_cast<std::size_t>(T), "schedule length does not match T");
    for (std::size_t i = 0; i < alphas_bar.size(); ++i) {
        require(alphas_bar[i] > 0 && alphas_bar[i] <= 1, "alpha-bar outside (0, 1]");
        if (i > 0) require(alphas_bar[i] < alphas_bar[i - 1], "alpha-bar not strictly decreasing");
    }
}

NoiseSchedule NoiseSchedule::from_alphas_bar(std::vector<double> alphas_bar) {
    NoiseSchedule s{static_cast<int>(alphas_bar.size()), std::move(alphas_bar)};
    s.validate();
    return s;
}

NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start, double beta_end) {
    require(T >= 1, "schedule needs T >= 1, got " + std::to_string(T));
    std::vector<double> ab(static_cast<std::size_t>(T));
    if (kind == ScheduleKind::linear_beta) {
        require(beta_start > 0 && beta_end < 1 && beta_start <= beta_end, "invalid beta range");
        double prod = 1.0;
        for (int i = 0; i < T; ++i) {
            const double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (T - 1);
            prod *= 1.0 - beta;
            ab[static_cast<std::size_t>(i)] = prod;
        }
    } else {
        constexpr double s = 0.008;
        auto f = [&](int t) {
            const double c = std::cos((static_cast<double>(t) / T + s) / (1 + s) * std::numbers::pi / 2);
            return c * c;
        };
        double prod = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
            prod *= 1.0 - beta;
            ab[static_cast<std::size_t>(t - 1)] = prod;
        }
    }
    return NoiseSchedule::from_alphas_bar(std::move(ab));
}

nn::Tensor forward_diffuse(const nn::Tensor& z0, int t, const nn::Tensor& eps, const NoiseSchedule& schedule) {
    require(t >= 1 && t <= schedule.T, "timestep " + std::to_string(t) + " outside [1, " +
                                           std::to_string(schedule.T) + "]");
    require(z0.shape() == eps.shape(), "noise shape differs from the latent shape");
    const double ab = schedule.alpha_bar(t);
    return nn::add(nn::scale(z0, std::sqrt(ab)), nn::scale(eps, std::sqrt(1.0 - ab)));
}

std::vector<double> forward_diffuse(const std::vector<double>& z0, int t, const std::vector<double>& eps,
                                    const NoiseSchedule& schedule) {
    require(t >= 1 && t <= schedule.T, "timestep " + std::to_string(t) + " outside [1, " +
                                           std::to_string(schedule.T) + "]");
    require(z0.size() == eps.size(), "noise shape differs from the latent shape");
    const double ab = schedule.alpha_bar(t), a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    std::vector<double> out(z0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

std::vector<int> sampler_timesteps(int T, int steps) {
    require(steps >= 0, "sampler step count must be non-negative");
    require(steps <= T, "sampler step count " + std::to_string(steps) + " exceeds T = " + std::to_string(T));
    std::vector<int> ts;
    for (int i = 0; i < steps; ++i)
        ts.push_back(static_cast<int>(std::lround(T - static_cast<double>(i) * T / steps)));
    return ts;
}

nn::Tensor ddim_sample(const nn::Tensor& z_T, const NoisePredictor& predict, const NoiseSchedule& schedule,
                       const SamplerConfig& config) {
    require(config.eta >= 0, "eta must be non-negative");
    const std::vector<int> ts = sampler_timesteps(schedule.T, config.steps);
    nn::NoGradGuard guard;
    std::vector<double> z(z_T.values().begin(), z_T.values().end());
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double ab = schedule.alpha_bar(t), ab_prev = schedule.alpha_bar(prev);
        const nn::Tensor eps_t = predict(nn::Tensor::from(z_T.shape(), z), t);
        require(eps_t.shape() == z_T.shape(), "noise prediction has shape " + nn::shape_str(eps_t.shape()) +
                                                  ", expected " + nn::shape_str(z_T.shape()));
        const auto eps = eps_t.values();
        const double sigma =
            config.eta * std::sqrt((1 - ab_prev) / (1 - ab)) * std::sqrt(std::max(0.0, 1 - ab / ab_prev));
        const double dir = std::sqrt(std::max(0.0, 1 - ab_prev - sigma * sigma));
        for (std::size_t k = 0; k < z.size(); ++k) {
            const double x0 = (z[k] - std::sqrt(1 - ab) * eps[k]) / std::sqrt(ab);
            z[k] = std::sqrt(ab_prev) * x0 + dir * eps[k];
            if (sigma > 0) z[k] += sigma * normal(rng);
        }
    }
    return nn::Tensor::from(z_T.shape(), std::move(z));
}

}  // namespace cfs::diffusion
