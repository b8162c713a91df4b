#include "cfsynth/denoiser.hpp"

#include "cfsynth/error.hpp"

#include <cmath>

namespace cfs::diffusion {

using nn::Tensor;

namespace {

Tensor broadcast_frames(const Tensor& t, int frames) {
    if (t.dim(0) == frames) return t;
    require(t.dim(0) == 1, "conditioning batch " + std::to_string(t.dim(0)) + " does not match " +
                               std::to_string(frames) + " frames");
    return nn::repeat0(t, frames);
}

void check_bundle(const cond::ConditioningBundle& b, const Tensor& z_t, const DenoiserConfig& cfg) {
    const int F = z_t.dim(0), h = z_t.dim(1), w = z_t.dim(2);
    const std::size_t levels = cfg.channels.size();
    require(b.pose.defined(), "conditioning bundle lacks the pose latent");
    require(b.pose.shape() == nn::Shape({F, h, w, cfg.pose_channels}),
            "pose latent " + nn::shape_str(b.pose.shape()) + " does not match the noise latent " +
                nn::shape_str(z_t.shape()));
    require(b.fg.layers() == static_cast<int>(levels), "conditioning bundle lacks foreground features (need " +
                                                           std::to_string(levels) + " layers)");
    for (std::size_t l = 0; l < levels; ++l) {
        const Tensor& f = b.fg.features[l];
        require(f.defined() && f.shape().size() == 3 && f.dim(1) == (h >> l) * (w >> l) && f.dim(2) == cfg.channels[l],
                "foreground features of layer " + std::to_string(l) + " have the wrong shape");
    }
    require(b.bg.levels.size() == levels - 1, "conditioning bundle lacks background latents");
    for (std::size_t l = 0; l + 1 < levels; ++l)
        require(b.bg.levels[l].defined() &&
                    b.bg.levels[l].shape() == nn::Shape({F, h >> l, w >> l, cfg.channels[l]}),
                "background latents of level " + std::to_string(l) + " do not match the window");
    require(b.identity.defined() && b.identity.shape().size() == 3 && b.identity.dim(2) == cfg.identity_dim,
            "conditioning bundle lacks the identity embedding");
}

}  // namespace

Tensor Denoiser::predict(const Tensor& z_t, const std::vector<int>& timesteps, const cond::ConditioningBundle& bundle,
                         bool temporal) const {
    require(z_t.shape().size() == 4 && z_t.dim(3) == config.latent_channels,
            "noisy latent must be [F,h,w," + std::to_string(config.latent_channels) + "]");
    const int F = z_t.dim(0), levels = static_cast<int>(config.channels.size());
    require(z_t.dim(1) % (1 << (levels - 1)) == 0 && z_t.dim(2) % (1 << (levels - 1)) == 0,
            "latent size must halve cleanly at every level");
    require(timesteps.size() == 1 || timesteps.size() == static_cast<std::size_t>(F),
            "need one timestep per frame or one shared timestep");
    check_bundle(bundle, z_t, config);

    std::vector<int> ts = timesteps;
    if (ts.size() == 1) ts.assign(static_cast<std::size_t>(F), timesteps[0]);
    const Tensor temb = time2(nn::silu(time1(unet::sinusoidal_embedding(ts, config.time_dim))));

    auto run_level = [&](const Level& lv, Tensor h, int l, const Tensor& bg) {
        h = lv.res(h, temb);
        h = lv.self_attn(h, broadcast_frames(bundle.fg.features[static_cast<std::size_t>(l)], F));
        h = lv.cross_attn(h, bg, bundle.identity, bundle.lambda);
        if (temporal) h = temporal_attend(h, lv.temporal);
        return h;
    };

    Tensor h = fuse(nn::concat(z_t, bundle.pose, 3));
    std::vector<Tensor> skips;
    for (int l = 0; l < levels; ++l) {
        if (l > 0) h = down[static_cast<std::size_t>(l - 1)](h);
        h = run_level(enc[static_cast<std::size_t>(l)], h, l, Tensor());
        skips.push_back(h);
    }
    for (int l = levels - 2; l >= 0; --l) {
        h = up[static_cast<std::size_t>(l)](nn::upsample2x(h));
        h = nn::concat(h, skips[static_cast<std::size_t>(l)], 3);
        h = run_level(dec[static_cast<std::size_t>(l)], h, l,
                      unet::to_tokens(bundle.bg.levels[static_cast<std::size_t>(l)]));
    }
    return out(nn::silu(out_norm(h)));
}

Tensor training_loss(const Denoiser& denoiser, const Tensor& z0, const Tensor& eps, const std::vector<int>& timesteps,
                     const cond::ConditioningBundle& bundle, const NoiseSchedule& schedule, bool temporal) {
    require(z0.shape().size() == 4 && z0.shape() == eps.shape(), "z0 and eps must share an [F,h,w,c] shape");
    const int F = z0.dim(0);
    require(timesteps.size() == 1 || timesteps.size() == static_cast<std::size_t>(F),
            "need one timestep per frame or one shared timestep");
    const std::size_t per = z0.size() / static_cast<std::size_t>(F);
    std::vector<double> zt(z0.size());
    for (int f = 0; f < F; ++f) {
        const int t = timesteps[timesteps.size() == 1 ? 0 : static_cast<std::size_t>(f)];
        require(t >= 1 && t <= schedule.T, "training timestep " + std::to_string(t) + " outside [1, " +
                                               std::to_string(schedule.T) + "]");
        const double a = std::sqrt(schedule.alpha_bar(t)), b = std::sqrt(1.0 - schedule.alpha_bar(t));
        for (std::size_t i = f * per; i < (f + 1) * per; ++i) zt[i] = a * z0.values()[i] + b * eps.values()[i];
    }
    const Tensor pred = denoiser.predict(Tensor::from(z0.shape(), std::move(zt)), timesteps, bundle, temporal);
    return nn::mse(pred, eps.detach());
}

Denoiser make_denoiser(nn::ParamStore& store, std::mt19937_64& rng, const DenoiserConfig& config) {
    require(config.channels.size() >= 2, "denoiser needs at least two resolutions");
    const std::string gb = "denoiser_backbone", gs = "denoiser_self_attention", gc = "denoiser_cross_attention",
                      gt = "temporal";
    Denoiser d;
    d.config = config;
    d.time1 = nn::make_linear(store, rng, "unet.time1", gb, config.time_dim, config.temb_dim);
    d.time2 = nn::make_linear(store, rng, "unet.time2", gb, config.temb_dim, config.temb_dim);
    d.fuse = nn::make_conv(store, rng, "unet.fuse", "input_fusion", config.latent_channels + config.pose_channels,
                           config.channels[0]);
    auto level = [&](const std::string& p, int cin, int c) {
        Denoiser::Level lv;
        lv.res = unet::make_resblock(store, rng, p + ".res", gb, cin, c, config.temb_dim, config.groups);
        lv.self_attn = unet::make_self_attention(store, rng, p + ".self_attn", gs, c, config.heads);
        lv.cross_attn = cond::make_cross_attention(store, rng, p + ".cross_attn", gc, c, config.identity_dim,
                                                   config.heads);
        lv.temporal = unet::make_temporal_block(store, rng, p + ".temporal", gt, c, config.heads);
        return lv;
    };
    const int levels = static_cast<int>(config.channels.size());
    for (int l = 0; l < levels; ++l) {
        const int c = config.channels[static_cast<std::size_t>(l)];
        if (l > 0)
            d.down.push_back(nn::make_conv(store, rng, "unet.down" + std::to_string(l), gb,
                                           config.channels[static_cast<std::size_t>(l - 1)], c, 3, 2));
        d.enc.push_back(level("unet.enc" + std::to_string(l), c, c));
    }
    d.dec.resize(static_cast<std::size_t>(levels - 1));
    d.up.resize(static_cast<std::size_t>(levels - 1));
    for (int l = levels - 2; l >= 0; --l) {
        const int c = config.channels[static_cast<std::size_t>(l)];
        d.up[static_cast<std::size_t>(l)] = nn::make_conv(store, rng, "unet.up" + std::to_string(l), gb,
                                                          config.channels[static_cast<std::size_t>(l + 1)], c);
        d.dec[static_cast<std::size_t>(l)] = level("unet.dec" + std::to_string(l), 2 * c, c);
    }
    d.out_norm = nn::make_norm(store, "unet.out_norm", gb, config.channels[0], config.groups);
    d.out = nn::make_conv(store, rng, "unet.out", gb, config.channels[0], config.latent_channels, 3, 1,
                          nn::Init::xavier);
    return d;
}

Tensor temporal_attend(const Tensor& frame_latents, const unet::TemporalBlock& block) {
    require(frame_latents.shape().size() == 4, "frame latents must be [F,h,w,C]");
    require(frame_latents.dim(0) >= 1, "temporal attention needs at least one frame");
    return block(frame_latents);
}

}  // namespace cfs::diffusion
