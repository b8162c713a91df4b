#include "cfsynth/codec.hpp"

#include "cfsynth/error.hpp"
#include "cfsynth/nn/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cfs::codec {

using nn::Tensor;

namespace {

int stage_count(int scale) {
    int n = 0;
    while ((1 << n) < scale) ++n;
    return n;
}

int level_channels(const CodecConfig& c, int level) { return std::min(c.width, 8 << level); }

}  // namespace

Tensor to_tensor(const std::vector<Image>& images) {
    require(!images.empty(), "no images to convert");
    const Image& f = images[0];
    std::vector<double> v;
    v.reserve(f.data.size() * images.size());
    for (const auto& im : images) {
        require(im.same_dims(f), "images in a batch differ in size");
        v.insert(v.end(), im.data.begin(), im.data.end());
    }
    return Tensor::from({static_cast<int>(images.size()), f.height, f.width, f.channels}, std::move(v));
}

std::vector<Image> to_images(const Tensor& t) {
    require(t.shape().size() == 4, "expected a [B,H,W,C] tensor");
    const int B = t.dim(0), H = t.dim(1), W = t.dim(2), C = t.dim(3);
    std::vector<Image> out;
    const std::size_t n = static_cast<std::size_t>(H) * W * C;
    for (int b = 0; b < B; ++b) {
        Image im(H, W, C);
        std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(b * n), n, im.data.begin());
        out.push_back(std::move(im));
    }
    return out;
}

LatentCodec::LatentCodec(const CodecConfig& config, std::uint64_t seed) : config_(config) {
    require(config.scale_factor >= 1 && (config.scale_factor & (config.scale_factor - 1)) == 0,
            "codec scale factor must be a power of two");
    require(config.latent_channels >= 1 && config.width >= 1 && config.image_channels >= 1,
            "codec channel counts must be positive");
    std::mt19937_64 rng(seed);
    const int n = stage_count(config.scale_factor);
    const std::string g = "codec";
    enc_.push_back(nn::make_conv(params_, rng, "codec.enc.in", g, config.image_channels, level_channels(config, 0)));
    for (int i = 1; i <= n; ++i) {
        const std::string p = "codec.enc." + std::to_string(i);
        enc_.push_back(nn::make_conv(params_, rng, p + ".down", g, level_channels(config, i - 1),
                                     level_channels(config, i), 3, 2));
        enc_.push_back(nn::make_conv(params_, rng, p + ".conv", g, level_channels(config, i), level_channels(config, i)));
    }
    enc_.push_back(nn::make_conv(params_, rng, "codec.enc.out", g, level_channels(config, n), config.latent_channels, 3,
                                 1, nn::Init::xavier));

    dec_.push_back(nn::make_conv(params_, rng, "codec.dec.in", g, config.latent_channels, level_channels(config, n)));
    dec_.push_back(nn::make_conv(params_, rng, "codec.dec.mid", g, level_channels(config, n), level_channels(config, n)));
    for (int i = n; i >= 1; --i) {
        const std::string p = "codec.dec." + std::to_string(i);
        dec_.push_back(nn::make_conv(params_, rng, p + ".up", g, level_channels(config, i), level_channels(config, i - 1)));
        dec_.push_back(
            nn::make_conv(params_, rng, p + ".conv", g, level_channels(config, i - 1), level_channels(config, i - 1)));
    }
    dec_.push_back(nn::make_conv(params_, rng, "codec.dec.out", g, level_channels(config, 0), config.image_channels, 3,
                                 1, nn::Init::xavier));
}

void LatentCodec::freeze() {
    frozen_ = true;
    params_.set_trainable({});
}

void LatentCodec::set_latent_scale(double s) {
    require(std::isfinite(s) && s > 0, "latent scale must be positive");
    latent_scale_ = s;
}

void LatentCodec::check_image_dims(int h, int w, int c) const {
    const int s = config_.scale_factor;
    require(c == config_.image_channels, "codec expects " + std::to_string(config_.image_channels) +
                                             "-channel images, got " + std::to_string(c));
    require(h > 0 && w > 0 && h % s == 0 && w % s == 0, "image size " + std::to_string(h) + "x" + std::to_string(w) +
                                                            " is not divisible by the scale factor " +
                                                            std::to_string(s));
}

Tensor LatentCodec::encode_tensor(const Tensor& images) const {
    require(images.shape().size() == 4, "codec input must be [B,H,W,C]");
    check_image_dims(images.dim(1), images.dim(2), images.dim(3));
    Tensor h = images;
    for (std::size_t i = 0; i + 1 < enc_.size(); ++i) h = nn::silu(enc_[i](h));
    return nn::scale(enc_.back()(h), latent_scale_);
}

Tensor LatentCodec::decode_tensor(const Tensor& latents) const {
    require(latents.shape().size() == 4 && latents.dim(3) == config_.latent_channels,
            "latent shape " + nn::shape_str(latents.shape()) + " does not match the codec (" +
                std::to_string(config_.latent_channels) + " channels)");
    Tensor h = nn::scale(latents, 1.0 / latent_scale_);
    h = nn::silu(dec_[0](h));
    h = nn::silu(dec_[1](h));
    for (std::size_t i = 2; i + 1 < dec_.size(); i += 2) {
        h = nn::silu(dec_[i](nn::upsample2x(h)));
        h = nn::silu(dec_[i + 1](h));
    }
    return nn::sigmoid(dec_.back()(h));
}

LatentTensor LatentCodec::encode(const Image& image) const {
    check_image_dims(image.height, image.width, image.channels);
    nn::NoGradGuard guard;
    const Tensor z = encode_tensor(to_tensor({image}));
    LatentTensor out{z.dim(1), z.dim(2), z.dim(3), config_.scale_factor, {z.values().begin(), z.values().end()}};
    return out;
}

Image LatentCodec::decode(const LatentTensor& latent) const {
    require(latent.channels == config_.latent_channels && latent.scale_factor == config_.scale_factor &&
                latent.height > 0 && latent.width > 0 &&
                latent.values.size() == static_cast<std::size_t>(latent.height) * latent.width * latent.channels,
            "latent does not match the codec configuration");
    nn::NoGradGuard guard;
    const Tensor z = Tensor::from({1, latent.height, latent.width, latent.channels}, latent.values);
    Image out = to_images(decode_tensor(z))[0];
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

void LatentCodec::save(const std::filesystem::path& path) const {
    nn::Checkpoint ck;
    ck.metadata = {{"kind", "codec"},
                   {"scale_factor", config_.scale_factor},
                   {"latent_channels", config_.latent_channels},
                   {"width", config_.width},
                   {"image_channels", config_.image_channels},
                   {"latent_scale", latent_scale_},
                   {"frozen", frozen_},
                   {"checksum", nn::hex64(checksum())}};
    ck.arrays = nn::export_params(params_);
    nn::write_checkpoint(path, ck);
}

LatentCodec LatentCodec::load(const std::filesystem::path& path) {
    const nn::Checkpoint ck = nn::read_checkpoint(path);
    const auto& m = ck.metadata;
    require(m.value("kind", "") == "codec", path.string() + " is not a codec checkpoint");
    CodecConfig cfg;
    try {
        cfg.scale_factor = m.at("scale_factor").get<int>();
        cfg.latent_channels = m.at("latent_channels").get<int>();
        cfg.width = m.at("width").get<int>();
        cfg.image_channels = m.at("image_channels").get<int>();
    } catch (const nlohmann::json::exception& e) {
        reject(path.string() + ": bad codec metadata: " + e.what());
    }
    LatentCodec codec(cfg);
    nn::import_params(codec.params_, ck);
    codec.set_latent_scale(m.value("latent_scale", 1.0));
    if (m.value("frozen", false)) codec.freeze();
    return codec;
}

std::vector<double> train_codec(LatentCodec& codec, const std::vector<Image>& corpus, const CodecTrainConfig& cfg) {
    require(!corpus.empty(), "codec training corpus is empty");
    require(cfg.steps >= 0 && cfg.batch >= 1 && cfg.lr > 0, "invalid codec training settings");
    if (codec.frozen()) throw std::logic_error("codec is frozen; training would alter its weights");
    for (const auto& im : corpus) require(im.same_dims(corpus[0]), "codec corpus images differ in size");

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        if (cfg.log_path.has_parent_path()) std::filesystem::create_directories(cfg.log_path.parent_path());
        log.open(cfg.log_path);
        if (!log) throw std::runtime_error("cannot write " + cfg.log_path.string());
    }
    codec.set_latent_scale(1.0);
    codec.params().set_trainable({"codec"});
    nn::Adam opt(cfg.lr);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
    std::vector<double> losses;
    for (int step = 0; step < cfg.steps; ++step) {
        // Cosine decay to 10% of the base rate.
        const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
        opt.set_lr(cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(frac * 3.141592653589793))));
        std::vector<Image> batch;
        for (int b = 0; b < cfg.batch; ++b) batch.push_back(corpus[pick(rng)]);
        const Tensor x = to_tensor(batch);
        codec.params().zero_grad();
        const Tensor loss = nn::mse(codec.decode_tensor(codec.encode_tensor(x)), x);
        nn::backward(loss);
        opt.step(codec.params());
        losses.push_back(loss.item());
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            log << nlohmann::json{{"step", step}, {"loss", loss.item()}, {"lr", opt.lr()}}.dump() << '\n';
    }
    codec.params().zero_grad();

    // Unit-variance latents over the corpus.
    double s = 0, s2 = 0;
    std::size_t n = 0;
    {
        nn::NoGradGuard guard;
        for (const auto& im : corpus) {
            const Tensor z = codec.encode_tensor(to_tensor({im}));
            for (double v : z.values()) {
                s += v;
                s2 += v * v;
                ++n;
            }
        }
    }
    const double var = s2 / n - (s / n) * (s / n);
    codec.set_latent_scale(var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0);
    codec.freeze();
    if (log)
        log << nlohmann::json{{"final", true}, {"latent_scale", codec.latent_scale()},
                              {"checksum", nn::hex64(codec.checksum())}}
                   .dump()
            << '\n';
    return losses;
}

}  // namespace cfs::codec
