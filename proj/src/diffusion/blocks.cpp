#include "cfsynth/blocks.hpp"

#include "cfsynth/error.hpp"

#include <cmath>

namespace cfs::unet {

using nn::Tensor;

Tensor sinusoidal_embedding(const std::vector<int>& positions, int dim) {
    require(dim >= 2 && dim % 2 == 0, "embedding dimension must be even");
    const int half = dim / 2;
    std::vector<double> v;
    v.reserve(positions.size() * static_cast<std::size_t>(dim));
    for (int p : positions) {
        for (int i = 0; i < half; ++i) v.push_back(std::sin(p * std::exp(-std::log(10000.0) * i / half)));
        for (int i = 0; i < half; ++i) v.push_back(std::cos(p * std::exp(-std::log(10000.0) * i / half)));
    }
    return Tensor::from({static_cast<int>(positions.size()), dim}, std::move(v));
}

Tensor to_tokens(const Tensor& x) {
    require(x.shape().size() == 4, "expected [B,H,W,C], got " + nn::shape_str(x.shape()));
    return nn::reshape(x, {x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

Tensor from_tokens(const Tensor& t, int height, int width) {
    require(t.shape().size() == 3 && t.dim(1) == height * width, "token count does not match the feature map");
    return nn::reshape(t, {t.dim(0), height, width, t.dim(2)});
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb) const {
    Tensor h = conv1(nn::silu(norm1(x)));
    h = nn::add_channel(h, time_proj(nn::silu(temb)));
    h = conv2(nn::silu(norm2(h)));
    return nn::add(skip.w.defined() ? skip(x) : x, h);
}

ResBlock make_resblock(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name, const std::string& group,
                       int cin, int cout, int temb_dim, int groups) {
    ResBlock r;
    r.norm1 = nn::make_norm(store, name + ".norm1", group, cin, groups);
    r.conv1 = nn::make_conv(store, rng, name + ".conv1", group, cin, cout);
    r.time_proj = nn::make_linear(store, rng, name + ".time", group, temb_dim, cout);
    r.norm2 = nn::make_norm(store, name + ".norm2", group, cout, groups);
    r.conv2 = nn::make_conv(store, rng, name + ".conv2", group, cout, cout, 3, 1, nn::Init::xavier);
    if (cin != cout) r.skip = nn::make_conv(store, rng, name + ".skip", group, cin, cout, 1, 1, nn::Init::xavier);
    return r;
}

Tensor SelfAttention::operator()(const Tensor& x, const Tensor& extra) const {
    const int H = x.dim(1), W = x.dim(2);
    const Tensor tokens = to_tokens(x);
    const Tensor n = norm(tokens);
    Tensor kv = n;
    if (extra.defined()) {
        require(extra.shape().size() == 3 && extra.dim(0) == x.dim(0) && extra.dim(2) == x.dim(3),
                "extra attention tokens " + nn::shape_str(extra.shape()) + " do not match features " +
                    nn::shape_str(x.shape()));
        kv = nn::concat(n, extra, 1);
    }
    const Tensor a = nn::attention(q(n), k(kv), v(kv), heads);
    return from_tokens(nn::add(tokens, out(a)), H, W);
}

SelfAttention make_self_attention(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name,
                                  const std::string& group, int channels, int heads) {
    require(channels % heads == 0, "channels must divide evenly across heads");
    SelfAttention s;
    s.norm = nn::make_norm(store, name + ".norm", group, channels);
    s.q = nn::make_linear(store, rng, name + ".q", group, channels, channels, false);
    s.k = nn::make_linear(store, rng, name + ".k", group, channels, channels, false);
    s.v = nn::make_linear(store, rng, name + ".v", group, channels, channels, false);
    s.out = nn::make_linear(store, rng, name + ".out", group, channels, channels);
    s.heads = heads;
    return s;
}

Tensor TemporalBlock::operator()(const Tensor& x) const {
    require(x.shape().size() == 4 && x.dim(0) >= 1, "temporal attention needs at least one frame");
    const int F = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    std::vector<int> frames(static_cast<std::size_t>(F));
    for (int f = 0; f < F; ++f) frames[static_cast<std::size_t>(f)] = f;
    const Tensor tokens = to_tokens(x);                                                   // [F, HW, C]
    const Tensor n = nn::add_channel(norm(tokens), sinusoidal_embedding(frames, C));
    const Tensor seq = nn::permute01(n);                                                  // [HW, F, C]
    const Tensor a = nn::permute01(out(nn::attention(q(seq), k(seq), v(seq), heads)));    // [F, HW, C]
    return from_tokens(nn::add(tokens, a), H, W);
}

TemporalBlock make_temporal_block(nn::ParamStore& store, std::mt19937_64& rng, const std::string& name,
                                  const std::string& group, int channels, int heads) {
    require(channels % heads == 0, "channels must divide evenly across heads");
    TemporalBlock t;
    t.norm = nn::make_norm(store, name + ".norm", group, channels);
    t.q = nn::make_linear(store, rng, name + ".q", group, channels, channels, false);
    t.k = nn::make_linear(store, rng, name + ".k", group, channels, channels, false);
    t.v = nn::make_linear(store, rng, name + ".v", group, channels, channels, false);
    t.out = nn::make_linear(store, rng, name + ".out", group, channels, channels, true, nn::Init::zero);
    t.heads = heads;
    return t;
}

}  // namespace cfs::unet
