#pragma once

#include "cfsynth/blocks.hpp"
#include "cfsynth/conditioning.hpp"
#include "cfsynth/diffusion.hpp"

#include <random>
#include <vector>

namespace cfs::diffusion {

struct DenoiserConfig {
    int latent_channels = 4;
    int pose_channels = 16;
    std::vector<int> channels{32, 64, 64};  // per resolution, last is the middle block
    int heads = 2;
    int time_dim = 32;
    int temb_dim = 128;
    int groups = 8;
    int identity_dim = 64;
};

// Noise-prediction U-Net. Parameter groups: input_fusion,
// denoiser_backbone, denoiser_self_attention, denoiser_cross_attention,
// temporal.
struct Denoiser {
    struct Level {
        unet::ResBlock res;
        unet::SelfAttention self_attn;
        cond::CrossAttention cross_attn;
        unet::TemporalBlock temporal;
    };

    DenoiserConfig config;
    nn::Linear time1, time2;
    nn::Conv fuse;
    std::vector<Level> enc, dec;  // enc: every resolution; dec: all but the middle
    std::vector<nn::Conv> down, up;
    nn::Norm out_norm;
    nn::Conv out;

    // z_t [F,h,w,c] for the F frames of one window; `timesteps` has one entry
    // per frame or a single shared entry. Temporal blocks run only when
    // `temporal` is set.
    nn::Tensor predict(const nn::Tensor& z_t, const std::vector<int>& timesteps, const cond::ConditioningBundle& bundle,
                       bool temporal) const;
};

// Unweighted noise-prediction MSE. Frame f of z0 [F,h,w,c] is diffused to
// timesteps[f] (or a single shared timestep) with eps[f].
nn::Tensor training_loss(const Denoiser& denoiser, const nn::Tensor& z0, const nn::Tensor& eps,
                         const std::vector<int>& timesteps, const cond::ConditioningBundle& bundle,
                         const NoiseSchedule& schedule, bool temporal);

Denoiser make_denoiser(nn::ParamStore& store, std::mt19937_64& rng, const DenoiserConfig& config);

// Temporal self-attention over frame latents [F,h,w,C].
nn::Tensor temporal_attend(const nn::Tensor& frame_latents, const unet::TemporalBlock& block);

}  // namespace cfs::diffusion
