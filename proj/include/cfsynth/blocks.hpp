#pragma once

#include "cfsynth/nn/layers.hpp"

#include <random>
#include <string>
#include <vector>

// U-Net building blocks shared by the denoiser, the reference net, and the
// conditioning encoders.
namespace cfs::unet {

// [B, dim] sinusoidal embedding of integer positions.
nn::Tensor sinusoidal_embedding(const std::vector<int>& positions, int dim);

struct ResBlock {
    nn::Norm norm1, norm2;
    nn::Conv conv1, conv2, skip;  // skip.w undefined when cin == cout
    nn::Linear time_proj;
    nn::Tensor operator()(const nn::Tensor& x, const nn::Tensor& temb) const;
};

ResBlock make_resblock(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name, const std::string& group,
                       int cin, int cout, int temb_dim, int groups);

// Residual multi-head self-attention over the spatial tokens of x[B,H,W,C].
// Queries come from the normalized tokens; when `extra` [B,S,C] is defined
// its tokens are appended to the key/value sequence without normalization.
// Key and value projections have no bias, so all-zero extra tokens
// contribute zero keys and values.
struct SelfAttention {
    nn::Norm norm;
    nn::Linear q, k, v, out;
    int heads = 2;
    nn::Tensor operator()(const nn::Tensor& x, const nn::Tensor& extra = {}) const;
};

SelfAttention make_self_attention(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name,
                                  const std::string& group, int channels, int heads);

// Attention across the frame axis at each spatial position of x[F,H,W,C],
// with sinusoidal frame encodings. The output projection starts at zero,
// so a fresh block is the identity.
struct TemporalBlock {
    nn::Norm norm;
    nn::Linear q, k, v, out;
    int heads = 2;
    nn::Tensor operator()(const nn::Tensor& x) const;
};

TemporalBlock make_temporal_block(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name,
                                  const std::string& group, int channels, int heads);

// [B,H,W,C] <-> [B,H*W,C]
nn::Tensor to_tokens(const nn::Tensor& x);
nn::Tensor from_tokens(const nn::Tensor& t, int height, int width);

}  // namespace cfs::unet
