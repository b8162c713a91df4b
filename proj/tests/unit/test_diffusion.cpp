#include "cfsynth/denoiser.hpp"
#include "cfsynth/diffusion.hpp"
#include "cfsynth/error.hpp"
#include "nn_fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

using namespace cfs;
using namespace cfs::diffusion;
using cfs::testing::max_abs_diff;
using cfs::testing::random_bundle;
using cfs::testing::random_tensor;
using cfs::testing::tiny_denoiser_config;
using nn::Tensor;

TEST_CASE("schedule: single step, product oracle, monotonicity, validation") {
    const auto one = make_schedule(ScheduleKind::linear_beta, 1);
    REQUIRE(one.T == 1);
    CHECK(one.alpha_bar(1) > 0);
    CHECK(one.alpha_bar(1) < 1);
    CHECK(make_schedule(ScheduleKind::cosine, 1).alpha_bar(1) < 1);

    const auto lin = make_schedule(ScheduleKind::linear_beta, 1000, 1e-4, 0.02);
    double prod = 1;
    for (int s = 1; s <= 1000; ++s) {
        const double beta = 1e-4 + (0.02 - 1e-4) * (s - 1) / 999.0;
        prod *= 1 - beta;
        REQUIRE(std::abs(lin.alpha_bar(s) - prod) <= 1e-10);
    }
    CHECK(lin.alpha_bar(1000) < 1e-2);
    CHECK(make_schedule(ScheduleKind::cosine, 1000).alpha_bar(1000) < 1e-2);

    for (auto kind : {ScheduleKind::linear_beta, ScheduleKind::cosine})
        for (int T : {10, 50, 1000}) {
            const auto s = make_schedule(kind, T);
            for (int t = 1; t <= T; ++t) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    CHECK_THROWS_AS(make_schedule(ScheduleKind::cosine, 0), InvalidInput);
    CHECK_THROWS_AS(NoiseSchedule::from_alphas_bar({0.5, 0.6}), InvalidInput);
    CHECK_THROWS_AS(parse_schedule_kind("sigmoid"), InvalidInput);
}

TEST_CASE("forward diffusion: endpoints and range") {
    std::mt19937_64 rng(2);
    const Tensor z0 = random_tensor(rng, {1, 4, 4, 4});
    const Tensor eps = random_tensor(rng, {1, 4, 4, 4});
    const auto near_one = NoiseSchedule::from_alphas_bar({1 - 1e-12, 0.5});
    CHECK(max_abs_diff(forward_diffuse(z0, 1, eps, near_one), z0) < 1e-5);

    const auto sched = make_schedule(ScheduleKind::linear_beta, 50);
    const Tensor zero = Tensor::zeros(z0.shape());
    const Tensor zt = forward_diffuse(zero, 17, eps, sched);
    const double b = std::sqrt(1 - sched.alpha_bar(17));
    for (std::size_t i = 0; i < zt.size(); ++i) REQUIRE(zt.values()[i] == b * eps.values()[i]);

    CHECK_THROWS_AS(forward_diffuse(z0, 0, eps, sched), InvalidInput);
    CHECK_THROWS_AS(forward_diffuse(z0, 51, eps, sched), InvalidInput);
    CHECK_THROWS_AS(forward_diffuse(z0, 3, Tensor::zeros({1, 4, 4, 3}), sched), InvalidInput);
}

TEST_CASE("forward diffusion: Monte Carlo moments") {
    const auto sched = NoiseSchedule::from_alphas_bar({0.25});
    const std::vector<double> z0{1.5, -0.7};
    const int n = 100000;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < z0.size(); ++k) {
        double s = 0, s2 = 0;
        for (int i = 0; i < n; ++i) {
            const double v = forward_diffuse(std::vector<double>{z0[k]}, 1, {normal(rng)}, sched)[0];
            s += v;
            s2 += v * v;
        }
        const double mean = s / n, var = (s2 - n * mean * mean) / (n - 1);
        CHECK(std::abs(mean - 0.5 * z0[k]) < 3 * std::sqrt(0.75 / n));
        CHECK(std::abs(var - 0.75) < 3 * 0.75 * std::sqrt(2.0 / (n - 1)));
    }

    // variance preservation for unit-variance signal and noise
    const auto lin = make_schedule(ScheduleKind::linear_beta, 100);
    for (int t : {1, 10, 50, 100}) {
        double s = 0, s2 = 0;
        for (int i = 0; i < n; ++i) {
            const double v = forward_diffuse(std::vector<double>{normal(rng)}, t, {normal(rng)}, lin)[0];
            s += v;
            s2 += v * v;
        }
        const double mean = s / n, var = (s2 - n * mean * mean) / (n - 1);
        CHECK(std::abs(var - 1.0) < 3 * std::sqrt(2.0 / (n - 1)));
    }
}

TEST_CASE("DDIM: one-step inversion, zero steps, step limit, seeded eta") {
    const auto sched = make_schedule(ScheduleKind::linear_beta, 10);
    std::mt19937_64 rng(5);
    const Tensor z0 = random_tensor(rng, {2, 4, 4, 4});
    const Tensor eps = random_tensor(rng, {2, 4, 4, 4});
    const Tensor zT = forward_diffuse(z0, 10, eps, sched);
    NoisePredictor oracle = [&](const Tensor&, int t) {
        REQUIRE(t == 10);
        return eps;
    };
    CHECK(max_abs_diff(ddim_sample(zT, oracle, sched, {1, 0.0, 0}), z0) < 1e-5);

    NoisePredictor never = [](const Tensor&, int) -> Tensor { throw std::logic_error("called"); };
    const Tensor same = ddim_sample(zT, never, sched, {0, 0.0, 0});
    CHECK(std::equal(same.values().begin(), same.values().end(), zT.values().begin()));
    CHECK_THROWS_AS(ddim_sample(zT, never, sched, {11, 0.0, 0}), InvalidInput);

    CHECK(sampler_timesteps(1000, 4) == std::vector<int>{1000, 750, 500, 250});
    CHECK(sampler_timesteps(10, 10).back() == 1);

    NoisePredictor fixed = [](const Tensor& z, int) { return nn::scale(z, 0.3); };
    const Tensor a = ddim_sample(zT, fixed, sched, {5, 0.7, 42});
    const Tensor b = ddim_sample(zT, fixed, sched, {5, 0.7, 42});
    const Tensor c = ddim_sample(zT, fixed, sched, {5, 0.7, 43});
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(max_abs_diff(a, c) > 0.0);
}

namespace {

Tensor permute_positions(const Tensor& x, const std::vector<int>& perm) {
    const int F = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    std::vector<double> out(x.size());
    for (int f = 0; f < F; ++f)
        for (int p = 0; p < H * W; ++p)
            for (int c = 0; c < C; ++c)
                out[(static_cast<std::size_t>(f) * H * W + p) * C + c] =
                    x.values()[(static_cast<std::size_t>(f) * H * W + perm[static_cast<std::size_t>(p)]) * C + c];
    return Tensor::from(x.shape(), std::move(out));
}

}  // namespace

TEST_CASE("temporal attention: identity at init, per-position action, shapes") {
    nn::ParamStore store;
    std::mt19937_64 rng(7);
    auto block = unet::make_temporal_block(store, rng, "t", "temporal", 8, 2);
    const Tensor x1 = random_tensor(rng, {1, 3, 3, 8});
    CHECK(max_abs_diff(temporal_attend(x1, block), x1) == 0.0);
    const Tensor x4 = random_tensor(rng, {4, 3, 3, 8});
    CHECK(max_abs_diff(temporal_attend(x4, block), x4) == 0.0);

    // give the output projection weight so the block does something
    for (double& v : block.out.w.mutable_values()) v = std::normal_distribution<double>(0, 0.3)(rng);
    const Tensor y = temporal_attend(x4, block);
    CHECK(max_abs_diff(y, x4) > 1e-3);
    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(max_abs_diff(temporal_attend(permute_positions(x4, perm), block), permute_positions(y, perm)) < 1e-12);

    for (int F : {2, 8, 24}) CHECK(temporal_attend(random_tensor(rng, {F, 2, 2, 8}), block).shape() == nn::Shape({F, 2, 2, 8}));
    CHECK_THROWS_AS(temporal_attend(Tensor::zeros({0, 2, 2, 8}), block), InvalidInput);
}

TEST_CASE("predict: shapes, sensitivity to foreground features, determinism") {
    nn::ParamStore store;
    std::mt19937_64 rng(3);
    const auto cfg = tiny_denoiser_config();
    const Denoiser d = make_denoiser(store, rng, cfg);
    nn::NoGradGuard ng;
    for (int s : {8, 16}) {
        const auto bundle = random_bundle(rng, cfg, 2, s, s);
        const Tensor z = random_tensor(rng, {2, s, s, 4});
        const Tensor out = d.predict(z, {5, 9}, bundle, false);
        CHECK(out.shape() == z.shape());
        CHECK(max_abs_diff(out, d.predict(z, {5, 9}, bundle, false)) == 0.0);

        auto zeroed = bundle;
        for (auto& f : zeroed.fg.features) f = Tensor::zeros(f.shape());
        CHECK(max_abs_diff(out, d.predict(z, {5, 9}, zeroed, false)) > 0.0);
        // fresh temporal blocks leave the prediction as it was
        CHECK(max_abs_diff(out, d.predict(z, {5, 9}, bundle, true)) <= 1e-6);
    }
}

TEST_CASE("predict rejects an incomplete bundle") {
    nn::ParamStore store;
    std::mt19937_64 rng(3);
    const auto cfg = tiny_denoiser_config();
    const Denoiser d = make_denoiser(store, rng, cfg);
    const auto full = random_bundle(rng, cfg, 1, 8, 8);
    const Tensor z = random_tensor(rng, {1, 8, 8, 4});
    auto b = full;
    b.pose = Tensor();
    CHECK_THROWS_AS(d.predict(z, {1}, b, false), InvalidInput);
    b = full;
    b.fg.features.clear();
    CHECK_THROWS_AS(d.predict(z, {1}, b, false), InvalidInput);
    b = full;
    b.bg.levels.clear();
    CHECK_THROWS_AS(d.predict(z, {1}, b, false), InvalidInput);
    b = full;
    b.identity = Tensor();
    CHECK_THROWS_AS(d.predict(z, {1}, b, false), InvalidInput);
    CHECK_THROWS_AS(d.predict(z, {1, 2, 3}, full, false), InvalidInput);
}

TEST_CASE("training loss matches a scalar MSE oracle and is non-negative") {
    nn::ParamStore store;
    std::mt19937_64 rng(4);
    const auto cfg = tiny_denoiser_config();
    const Denoiser d = make_denoiser(store, rng, cfg);
    const auto sched = make_schedule(ScheduleKind::linear_beta, 100);
    const auto bundle = random_bundle(rng, cfg, 2, 8, 8);
    const Tensor z0 = random_tensor(rng, {2, 8, 8, 4});
    const Tensor eps = random_tensor(rng, {2, 8, 8, 4});
    const std::vector<int> ts{12, 80};

    const double loss = training_loss(d, z0, eps, ts, bundle, sched, false).item();
    std::vector<double> zt(z0.size());
    const std::size_t per = z0.size() / 2;
    for (std::size_t i = 0; i < zt.size(); ++i) {
        const double ab = sched.alpha_bar(ts[i / per]);
        zt[i] = std::sqrt(ab) * z0.values()[i] + std::sqrt(1 - ab) * eps.values()[i];
    }
    const Tensor pred = d.predict(Tensor::from(z0.shape(), zt), ts, bundle, false);
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred.values()[i] - eps.values()[i]) * (pred.values()[i] - eps.values()[i]);
    CHECK(std::abs(loss - s / static_cast<double>(pred.size())) <= 1e-6);
    CHECK(loss >= 0);
    CHECK(nn::mse(eps, eps).item() == 0.0);
    CHECK_THROWS_AS(training_loss(d, z0, eps, {0}, bundle, sched, false), InvalidInput);
}

TEST_CASE("training loss gradient matches central differences on ten parameters") {
    nn::ParamStore store;
    std::mt19937_64 rng(8);
    const auto cfg = tiny_denoiser_config();
    const Denoiser d = make_denoiser(store, rng, cfg);
    const auto sched = make_schedule(ScheduleKind::linear_beta, 100);
    const auto bundle = random_bundle(rng, cfg, 2, 8, 8);
    const Tensor z0 = random_tensor(rng, {2, 8, 8, 4});
    const Tensor eps = random_tensor(rng, {2, 8, 8, 4});
    const std::vector<int> ts{30, 60};

    std::set<std::string> all;
    for (const auto& g : store.groups()) all.insert(g);
    store.set_trainable(all);
    store.zero_grad();
    nn::backward(training_loss(d, z0, eps, ts, bundle, sched, false));

    const std::vector<std::pair<std::string, std::size_t>> probes{
        {"unet.fuse.w", 3},          {"unet.enc0.res.conv1.w", 17}, {"unet.enc1.self_attn.q.w", 5},
        {"unet.enc0.cross_attn.v.w", 2}, {"unet.dec0.cross_attn.k.w", 9}, {"unet.enc2.res.conv2.b", 1},
        {"unet.dec1.self_attn.out.w", 11}, {"unet.up0.w", 40},     {"unet.out.w", 7},
        {"unet.time1.w", 4}};
    const double h = 1e-4;
    for (const auto& [name, idx] : probes) {
        CAPTURE(name);
        Tensor p = store.get(name);
        REQUIRE(idx < p.size());
        REQUIRE(!p.grad().empty());
        const double analytic = p.grad()[idx];
        const double orig = p.values()[idx];
        double lp, lm;
        {
            nn::NoGradGuard ng;
            p.mutable_values()[idx] = orig + h;
            lp = training_loss(d, z0, eps, ts, bundle, sched, false).item();
            p.mutable_values()[idx] = orig - h;
            lm = training_loss(d, z0, eps, ts, bundle, sched, false).item();
            p.mutable_values()[idx] = orig;
        }
        const double numeric = (lp - lm) / (2 * h);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        CHECK(rel < 1e-3);
    }
}
