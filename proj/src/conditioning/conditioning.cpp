#include "cfsynth/conditioning.hpp"

#include "cfsynth/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace cfs::cond {

using nn::Tensor;

std::vector<int> align_value_rows(int identity_tokens, int key_tokens) {
    require(identity_tokens >= 1 && key_tokens >= 1, "token counts must be positive");
    std::vector<int> idx(static_cast<std::size_t>(key_tokens));
    for (int j = 0; j < key_tokens; ++j)
        idx[static_cast<std::size_t>(j)] =
            static_cast<int>(static_cast<long long>(j) * identity_tokens / key_tokens);
    return idx;
}

Tensor fused_cross_attention(const Tensor& z, const Tensor& z_bg, const Tensor& f_clip,
                             const AttentionProjections& proj, int heads, double lambda) {
    require(z.shape().size() == 3 && f_clip.shape().size() == 3, "cross-attention inputs must be token tensors");
    require(proj.w_q.shape().size() == 2 && proj.w_k.shape() == proj.w_q.shape() && proj.w_v.shape().size() == 2,
            "W_Q and W_K must be [C, d] matrices of the same shape");
    const int C = z.dim(2), d = proj.w_q.dim(1);
    require(proj.w_q.dim(0) == C, "W_Q expects " + std::to_string(proj.w_q.dim(0)) + " input channels, got " +
                                      std::to_string(C));
    require(proj.w_v.dim(0) == f_clip.dim(2) && proj.w_v.dim(1) == d,
            "W_V " + nn::shape_str(proj.w_v.shape()) + " does not map identity tokens of width " +
                std::to_string(f_clip.dim(2)) + " to d = " + std::to_string(d));
    require(heads >= 1 && d % heads == 0, "key dimension must split evenly across heads");
    require(f_clip.dim(0) == 1 || f_clip.dim(0) == z.dim(0), "identity batch must be 1 or match the queries");
    require(std::isfinite(lambda), "lambda must be finite");

    const Tensor q = nn::linear(z, proj.w_q, {});
    const Tensor v = nn::linear(f_clip, proj.w_v, {});
    const int K = f_clip.dim(1);
    const Tensor k_noise = nn::linear(z, proj.w_k, {});
    const Tensor self_term =
        nn::attention(q, k_noise, nn::gather_rows(v, align_value_rows(K, z.dim(1))), heads);
    if (!z_bg.defined()) return self_term;
    require(z_bg.shape().size() == 3 && z_bg.dim(0) == z.dim(0) && z_bg.dim(2) == C,
            "background tokens " + nn::shape_str(z_bg.shape()) + " incompatible with " + nn::shape_str(z.shape()));
    const Tensor k_bg = nn::linear(z_bg, proj.w_k, {});
    const Tensor bg_term = nn::attention(q, k_bg, nn::gather_rows(v, align_value_rows(K, z_bg.dim(1))), heads);
    return nn::add(nn::scale(bg_term, lambda), self_term);
}

Tensor CrossAttention::operator()(const Tensor& x, const Tensor& bg_tokens, const Tensor& identity,
                                  double lambda) const {
    const int H = x.dim(1), W = x.dim(2);
    const Tensor tokens = unet::to_tokens(x);
    const Tensor a = fused_cross_attention(norm(tokens), bg_tokens, identity, proj, heads, lambda);
    return unet::from_tokens(nn::add(tokens, out(a)), H, W);
}

CrossAttention make_cross_attention(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name,
                                    const std::string& group, int channels, int identity_dim, int heads) {
    require(channels % heads == 0, "channels must divide evenly across heads");
    CrossAttention c;
    c.norm = nn::make_norm(store, name + ".norm", group, channels);
    c.proj.w_q = nn::make_linear(store, rng, name + ".q", group, channels, channels, false).w;
    c.proj.w_k = nn::make_linear(store, rng, name + ".k", group, channels, channels, false).w;
    c.proj.w_v = nn::make_linear(store, rng, name + ".v", group, identity_dim, channels, false).w;
    c.out = nn::make_linear(store, rng, name + ".out", group, channels, channels);
    c.heads = heads;
    return c;
}

// --- Pose extractor ---

Tensor PoseExtractor::operator()(const Tensor& pose_maps) const {
    require(pose_maps.shape().size() == 4 && pose_maps.dim(3) == 3, "pose maps must be [B,H,W,3]");
    require(pose_maps.dim(1) % 8 == 0 && pose_maps.dim(2) % 8 == 0,
            "pose map size " + std::to_string(pose_maps.dim(1)) + "x" + std::to_string(pose_maps.dim(2)) +
                " is not divisible by the latent scale factor 8");
    Tensor h = nn::silu(c1(pose_maps));
    h = nn::silu(c2(h));
    h = nn::silu(c3(h));
    h = c4(h);
    return attn(h);
}

PoseExtractor make_pose_extractor(nn::ParamStore& store, std::mt19937_64& rng, int channels, int heads) {
    const std::string g = "pose_extractor";
    PoseExtractor p;
    p.c1 = nn::make_conv(store, rng, "pose.conv1", g, 3, 16, 3, 2);
    p.c2 = nn::make_conv(store, rng, "pose.conv2", g, 16, 32, 3, 2);
    p.c3 = nn::make_conv(store, rng, "pose.conv3", g, 32, 32, 3, 2);
    p.c4 = nn::make_conv(store, rng, "pose.conv4", g, 32, channels, 3, 1, nn::Init::xavier);
    p.attn = unet::make_self_attention(store, rng, "pose.attn", g, channels, heads);
    return p;
}

// --- Reference net ---

Tensor ReferenceNet::time_embedding(int batch) const {
    const Tensor e = unet::sinusoidal_embedding(std::vector<int>(static_cast<std::size_t>(batch), 0), config.time_dim);
    return time2(nn::silu(time1(e)));
}

std::vector<Tensor> ReferenceNet::forward(const Tensor& latents) const {
    require(latents.shape().size() == 4 && latents.dim(3) == config.latent_channels,
            "reference latents must be [B,h,w," + std::to_string(config.latent_channels) + "]");
    const int levels = static_cast<int>(config.channels.size());
    require(latents.dim(1) % (1 << (levels - 1)) == 0 && latents.dim(2) % (1 << (levels - 1)) == 0,
            "latent size must halve cleanly at every level");
    const Tensor temb = time_embedding(latents.dim(0));
    std::vector<Tensor> feats;
    Tensor h = conv_in(latents);
    for (int l = 0; l < levels; ++l) {
        if (l > 0) h = down[static_cast<std::size_t>(l - 1)](h);
        h = res[static_cast<std::size_t>(l)](h, temb);
        h = attn[static_cast<std::size_t>(l)](h);
        feats.push_back(unet::to_tokens(h));
    }
    return feats;
}

ReferenceNet make_reference_net(nn::ParamStore& store, std::mt19937_64& rng, const ReferenceConfig& config) {
    require(!config.channels.empty(), "reference net needs at least one level");
    const std::string gb = "reference_backbone", ga = "reference_spatial_attention";
    ReferenceNet r;
    r.config = config;
    r.time1 = nn::make_linear(store, rng, "ref.time1", gb, config.time_dim, config.temb_dim);
    r.time2 = nn::make_linear(store, rng, "ref.time2", gb, config.temb_dim, config.temb_dim);
    r.conv_in = nn::make_conv(store, rng, "ref.conv_in", gb, config.latent_channels, config.channels[0]);
    for (std::size_t l = 0; l < config.channels.size(); ++l) {
        const int c = config.channels[l];
        if (l > 0)
            r.down.push_back(nn::make_conv(store, rng, "ref.down" + std::to_string(l), gb, config.channels[l - 1], c,
                                           3, 2));
        const std::string p = "ref.level" + std::to_string(l);
        r.res.push_back(unet::make_resblock(store, rng, p + ".res", gb, c, c, config.temb_dim, config.groups));
        r.attn.push_back(unet::make_self_attention(store, rng, p + ".attn", ga, c, config.heads));
    }
    return r;
}

std::vector<double> downsample_mask(const Image& mask, int h, int w) {
    require(mask.channels == 1, "mask must be single-channel");
    require(h >= 1 && w >= 1 && mask.height >= h && mask.width >= w, "mask smaller than the target resolution");
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int sy = static_cast<int>((y + 0.5) * mask.height / h);
            const int sx = static_cast<int>((x + 0.5) * mask.width / w);
            out[static_cast<std::size_t>(y) * w + x] = mask.at(sy, sx, 0) >= 0.5 ? 1.0 : 0.0;
        }
    return out;
}

Image apply_image_mask(const Image& image, const Image& mask) {
    require(mask.channels == 1 && image.height == mask.height && image.width == mask.width,
            "mask and image differ in size");
    Image out = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (mask.at(y, x, 0) < 0.5)
                for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = 0.0;
    return out;
}

ForegroundFeatureSet encode_foreground(const Image& fg_image, const Image& mask, const codec::LatentCodec& codec,
                                       const ReferenceNet& net) {
    require(mask.channels == 1, "foreground mask must be single-channel");
    require(fg_image.height == mask.height && fg_image.width == mask.width,
            "foreground mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                " does not match image " + std::to_string(fg_image.height) + "x" + std::to_string(fg_image.width));
    Tensor latent;
    {
        nn::NoGradGuard guard;
        latent = codec.encode_tensor(codec::to_tensor({fg_image}));
    }
    return encode_foreground_latent(latent, mask, net);
}

ForegroundFeatureSet encode_foreground_latent(const Tensor& latent, const Image& mask, const ReferenceNet& net) {
    require(latent.shape().size() == 4 && latent.dim(0) == 1, "foreground latent must be [1,h,w,c]");
    require(mask.channels == 1, "foreground mask must be single-channel");
    ForegroundFeatureSet out;
    out.features = net.forward(latent);
    int h = latent.dim(1), w = latent.dim(2);
    for (std::size_t l = 0; l < out.features.size(); ++l) {
        out.heights.push_back(h);
        out.widths.push_back(w);
        out.masks.push_back(downsample_mask(mask, h, w));
        h /= 2;
        w /= 2;
    }
    return out;
}

ForegroundFeatureSet apply_mask(const ForegroundFeatureSet& features) {
    require(features.masks.size() == features.features.size(),
            "foreground features have " + std::to_string(features.features.size()) + " layers but " +
                std::to_string(features.masks.size()) + " masks");
    ForegroundFeatureSet out = features;
    for (std::size_t l = 0; l < features.features.size(); ++l) {
        const Tensor& f = features.features[l];
        require(f.shape().size() == 3 && features.masks[l].size() * static_cast<std::size_t>(f.dim(0)) ==
                                              static_cast<std::size_t>(f.dim(0) * f.dim(1)),
                "mask of layer " + std::to_string(l) + " does not match its features");
        std::vector<double> m;
        for (int b = 0; b < f.dim(0); ++b) m.insert(m.end(), features.masks[l].begin(), features.masks[l].end());
        out.features[l] = nn::mask_tokens(f, m);
    }
    out.masked = true;
    return out;
}

std::vector<LayerStats> feature_stats(const ForegroundFeatureSet& features) {
    std::vector<LayerStats> out;
    for (std::size_t l = 0; l < features.features.size(); ++l) {
        const Tensor& f = features.features[l];
        const int C = f.dim(2), S = f.dim(1);
        LayerStats s;
        s.layer = static_cast<int>(l);
        s.min = std::numeric_limits<double>::infinity();
        s.max = -s.min;
        auto v = f.values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::size_t tok = (i / static_cast<std::size_t>(C)) % static_cast<std::size_t>(S);
            (features.masks[l][tok] != 0 ? s.energy_inside : s.energy_outside) += v[i] * v[i];
            s.min = std::min(s.min, v[i]);
            s.max = std::max(s.max, v[i]);
        }
        out.push_back(s);
    }
    return out;
}

void dump_feature_stats(const std::filesystem::path& path, const std::vector<LayerStats>& stats) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& s : stats)
        out << nlohmann::json{{"layer", s.layer},
                              {"min", s.min},
                              {"max", s.max},
                              {"energy_inside", s.energy_inside},
                              {"energy_outside", s.energy_outside}}
                   .dump()
            << '\n';
}

// --- Background encoder ---

std::vector<Tensor> BackgroundEncoder::operator()(const Tensor& latents) const {
    require(latents.shape().size() == 4, "background latents must be [N,h,w,c]");
    const Tensor l0 = b0(nn::silu(a0(latents)));
    const Tensor l1 = b1(nn::silu(a1(nn::silu(l0))));
    return {l0, l1};
}

BackgroundEncoder make_background_encoder(nn::ParamStore& store, std::mt19937_64& rng, int latent_channels, int c0,
                                          int c1) {
    const std::string g = "background_encoder";
    BackgroundEncoder e;
    e.a0 = nn::make_conv(store, rng, "bg.a0", g, latent_channels, c0);
    e.b0 = nn::make_conv(store, rng, "bg.b0", g, c0, c0, 3, 1, nn::Init::xavier);
    e.a1 = nn::make_conv(store, rng, "bg.a1", g, c0, c1, 3, 2);
    e.b1 = nn::make_conv(store, rng, "bg.b1", g, c1, c1, 3, 1, nn::Init::xavier);
    return e;
}

BackgroundLatentSeq encode_background(const Tensor& latents, const BackgroundEncoder& encoder) {
    require(latents.shape().size() == 4 && latents.dim(0) >= 1, "background sequence is empty");
    return {encoder(latents)};
}

BackgroundLatentSeq encode_background(const std::vector<Image>& frames, const codec::LatentCodec& codec,
                                      const BackgroundEncoder& encoder) {
    require(!frames.empty(), "background sequence is empty");
    Tensor z;
    {
        nn::NoGradGuard guard;
        z = codec.encode_tensor(codec::to_tensor(frames));
    }
    return encode_background(z, encoder);
}

// --- Identity embedder ---

ConvTokenEmbedder::ConvTokenEmbedder(nn::ParamStore& store, std::mt19937_64& rng, int tokens, int dim, int width)
    : tokens_(tokens), dim_(dim) {
    require(tokens >= 1 && dim >= 1 && width >= 1, "identity embedder sizes must be positive");
    const std::string g = "identity_embedder";
    c1_ = nn::make_conv(store, rng, "id.conv1", g, 3, width / 2, 3, 2);
    c2_ = nn::make_conv(store, rng, "id.conv2", g, width / 2, width, 3, 2);
    c3_ = nn::make_conv(store, rng, "id.conv3", g, width, width, 3, 2);
    queries_ = store.add("id.queries", g, {1, tokens, width}, nn::normal_init(rng, static_cast<std::size_t>(tokens) * width, 1.0));
    k_ = nn::make_linear(store, rng, "id.k", g, width, width, false);
    v_ = nn::make_linear(store, rng, "id.v", g, width, width, false);
    proj_ = nn::make_linear(store, rng, "id.proj", g, width, dim);
}

Tensor ConvTokenEmbedder::operator()(const Tensor& images) const {
    require(images.shape().size() == 4 && images.dim(3) == 3, "identity input must be [B,H,W,3]");
    Tensor h = nn::silu(c1_(images));
    h = nn::silu(c2_(h));
    h = c3_(h);
    const Tensor tokens = unet::to_tokens(h);
    const Tensor q = nn::repeat0(queries_, images.dim(0));
    return proj_(nn::attention(q, k_(tokens), v_(tokens), 1));
}

Tensor embed_identity(const Image& fg_image, const IdentityEmbedder& embedder) {
    require(fg_image.channels == 3 && !fg_image.empty(), "identity input must be an RGB image");
    return embedder(codec::to_tensor({fg_image}));
}

}  // namespace cfs::cond
