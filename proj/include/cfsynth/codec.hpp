#pragma once

#include "cfsynth/image.hpp"
#include "cfsynth/nn/layers.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cfs::codec {

struct LatentTensor {
    int height = 0, width = 0, channels = 0;
    int scale_factor = 8;
    std::vector<double> values;  // h x w x c, channels last

    bool operator==(const LatentTensor&) const = default;
};

struct CodecConfig {
    int scale_factor = 8;  // power of two
    int latent_channels = 4;
    int width = 32;        // widest feature map
    int image_channels = 3;
};

// Images [B,H,W,C] <-> tensor.
nn::Tensor to_tensor(const std::vector<Image>& images);
std::vector<Image> to_images(const nn::Tensor& t);

// Deterministic convolutional autoencoder. Latents are multiplied by
// latent_scale so that encoded corpus latents have roughly unit variance.
class LatentCodec {
public:
    explicit LatentCodec(const CodecConfig& config = {}, std::uint64_t seed = 0);

    const CodecConfig& config() const { return config_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    bool frozen() const { return frozen_; }
    void freeze();
    double latent_scale() const { return latent_scale_; }
    void set_latent_scale(double s);
    std::uint64_t checksum() const { return params_.checksum("codec"); }

    // [B,H,W,C_img] -> [B,H/s,W/s,C_lat] and back; both differentiable.
    nn::Tensor encode_tensor(const nn::Tensor& images) const;
    nn::Tensor decode_tensor(const nn::Tensor& latents) const;

    LatentTensor encode(const Image& image) const;
    Image decode(const LatentTensor& latent) const;

    void save(const std::filesystem::path& path) const;
    static LatentCodec load(const std::filesystem::path& path);

private:
    void check_image_dims(int h, int w, int c) const;

    CodecConfig config_;
    nn::ParamStore params_;
    std::vector<nn::Conv> enc_, dec_;
    bool frozen_ = false;
    double latent_scale_ = 1.0;
};

struct CodecTrainConfig {
    int steps = 2000;
    double lr = 2e-3;
    int batch = 4;
    std::uint64_t seed = 0;
    std::filesystem::path log_path;  // JSONL; empty disables
    int log_every = 50;
};

// Reconstruction training (MSE) on random minibatches, then latent_scale
// from the corpus and freeze. Returns the per-step losses.
std::vector<double> train_codec(LatentCodec& codec, const std::vector<Image>& corpus, const CodecTrainConfig& cfg);

}  // namespace cfs::codec
