#pragma once

#include "cfsynth/blocks.hpp"
#include "cfsynth/codec.hpp"
#include "cfsynth/image.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

// Control pathways: pose extractor, reference foreground encoder with
// masking, background encoder, identity embedder, and fused cross-attention.
namespace cfs::cond {

// --- Fused cross-attention ---

struct AttentionProjections {
    nn::Tensor w_q;  // [C, d]
    nn::Tensor w_k;  // [C, d], shared by both key streams
    nn::Tensor w_v;  // [e, d]
};

// Row of F_clip used as the value for key token j of m: floor(j * K / m).
std::vector<int> align_value_rows(int identity_tokens, int key_tokens);

// lambda * softmax(Q K_bg^T / sqrt(d)) V + softmax(Q K_noise^T / sqrt(d)) V,
// per head, with Q = Z W_Q, K_noise = Z W_K, K_bg = Z_bg W_K and V the
// identity values F_clip W_V aligned to each key sequence by
// align_value_rows. z: [B,N,C], z_bg: [B,M,C] or undefined (then only the
// second term), f_clip: [1 or B, K, e]. Returns [B,N,d].
nn::Tensor fused_cross_attention(const nn::Tensor& z, const nn::Tensor& z_bg, const nn::Tensor& f_clip,
                                 const AttentionProjections& proj, int heads, double lambda);

// Residual block wrapping fused_cross_attention with a layer norm on the
// query stream and an output projection.
struct CrossAttention {
    nn::Norm norm;
    AttentionProjections proj;
    nn::Linear out;
    int heads = 2;
    nn::Tensor operator()(const nn::Tensor& x, const nn::Tensor& bg_tokens, const nn::Tensor& identity,
                          double lambda) const;
};

CrossAttention make_cross_attention(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name,
                                    const std::string& group, int channels, int identity_dim, int heads);

// --- Pose extractor ---

// Three stride-2 convolutions, one stride-1 convolution, then a residual
// self-attention layer. Maps [B,H,W,3] pose maps to [B,H/8,W/8,c_p].
struct PoseExtractor {
    nn::Conv c1, c2, c3, c4;
    unet::SelfAttention attn;
    nn::Tensor operator()(const nn::Tensor& pose_maps) const;
};

PoseExtractor make_pose_extractor(nn::ParamStore& store, std::mt19937_64& rng, int channels, int heads);

// --- Foreground (reference) encoder ---

struct ReferenceConfig {
    int latent_channels = 4;
    std::vector<int> channels{32, 64, 64};
    int heads = 2;
    int time_dim = 32;
    int temb_dim = 128;
    int groups = 8;
};

// Encoder half of the denoiser architecture run on the clean foreground
// latent at t = 0; the outputs of its spatial self-attention layers are the
// captured features.
struct ReferenceNet {
    ReferenceConfig config;
    nn::Linear time1, time2;
    nn::Conv conv_in;
    std::vector<unet::ResBlock> res;
    std::vector<unet::SelfAttention> attn;
    std::vector<nn::Conv> down;

    nn::Tensor time_embedding(int batch) const;
    // Per-level token features [B, h_l*w_l, c_l] from latents [B,h,w,c].
    std::vector<nn::Tensor> forward(const nn::Tensor& latents) const;
};

ReferenceNet make_reference_net(nn::ParamStore& store, std::mt19937_64& rng, const ReferenceConfig& config);

struct ForegroundFeatureSet {
    std::vector<nn::Tensor> features;         // [1, h_l*w_l, c_l]
    std::vector<std::vector<double>> masks;   // h_l*w_l entries of 0 or 1
    std::vector<int> heights, widths;
    bool masked = false;

    int layers() const { return static_cast<int>(features.size()); }
};

// Nearest-neighbour resampling of a single-channel mask to h x w, then
// thresholding at 0.5.
std::vector<double> downsample_mask(const Image& mask, int h, int w);

// Zeroes the image outside the mask.
Image apply_image_mask(const Image& image, const Image& mask);

// Raw features and per-layer masks for a foreground image whose background
// is already zeroed.
ForegroundFeatureSet encode_foreground(const Image& fg_image, const Image& mask, const codec::LatentCodec& codec,
                                       const ReferenceNet& net);
// Same, from the foreground's codec latent [1,h,w,c].
ForegroundFeatureSet encode_foreground_latent(const nn::Tensor& latent, const Image& mask, const ReferenceNet& net);

// z_l * f_l elementwise on every layer.
ForegroundFeatureSet apply_mask(const ForegroundFeatureSet& features);

// Per-layer energy inside and outside the mask, written as JSON lines.
struct LayerStats {
    int layer = 0;
    double min = 0, max = 0, energy_inside = 0, energy_outside = 0;
};
std::vector<LayerStats> feature_stats(const ForegroundFeatureSet& features);
void dump_feature_stats(const std::filesystem::path& path, const std::vector<LayerStats>& stats);

// --- Background encoder ---

// Learnable encoder over frozen-codec latents; one feature map per decoder
// resolution: [B,h,w,c_0] and [B,h/2,w/2,c_1].
struct BackgroundEncoder {
    nn::Conv a0, b0, a1, b1;
    std::vector<nn::Tensor> operator()(const nn::Tensor& latents) const;
};

BackgroundEncoder make_background_encoder(nn::ParamStore& store, std::mt19937_64& rng, int latent_channels, int c0,
                                          int c1);

struct BackgroundLatentSeq {
    std::vector<nn::Tensor> levels;  // [N, h_l, w_l, c_l]
    int frames() const { return levels.empty() ? 0 : levels[0].dim(0); }
};

BackgroundLatentSeq encode_background(const std::vector<Image>& frames, const codec::LatentCodec& codec,
                                      const BackgroundEncoder& encoder);
// Same, from precomputed codec latents [N,h,w,c].
BackgroundLatentSeq encode_background(const nn::Tensor& latents, const BackgroundEncoder& encoder);

// --- Identity embedder ---

class IdentityEmbedder {
public:
    virtual ~IdentityEmbedder() = default;
    // [B,H,W,3] -> [B,K,e]
    virtual nn::Tensor operator()(const nn::Tensor& images) const = 0;
    virtual int tokens() const = 0;
    virtual int dim() const = 0;
};

// Three stride-2 convolutions, attention pooling with K learned queries, and
// a linear map to e dimensions.
class ConvTokenEmbedder final : public IdentityEmbedder {
public:
    ConvTokenEmbedder() = default;
    ConvTokenEmbedder(nn::ParamStore& store, std::mt19937_64& rng, int tokens, int dim, int width = 32);
    nn::Tensor operator()(const nn::Tensor& images) const override;
    int tokens() const override { return tokens_; }
    int dim() const override { return dim_; }

private:
    nn::Conv c1_, c2_, c3_;
    nn::Tensor queries_;
    nn::Linear k_, v_, proj_;
    int tokens_ = 0, dim_ = 0;
};

nn::Tensor embed_identity(const Image& fg_image, const IdentityEmbedder& embedder);

// --- Bundle ---

struct ConditioningBundle {
    nn::Tensor pose;                 // [F, h, w, c_p]
    ForegroundFeatureSet fg;         // masked reference features
    BackgroundLatentSeq bg;          // per-frame background features
    nn::Tensor identity;             // [1, K, e]
    double lambda = 1.0;
};

}  // namespace cfs::cond
