#include "cfsynth/conditioning.hpp"
#include "cfsynth/dataio.hpp"
#include "cfsynth/error.hpp"
#include "attention_oracles.hpp"
#include "nn_fixtures.hpp"

#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace cfs;
using namespace cfs::cond;
using cfs::testing::max_abs_diff;
using cfs::testing::random_tensor;
using cfs::testing::fused_oracle;
using nn::Tensor;

namespace {

data::ClipRecord clip_for(std::uint64_t identity, int size = 64) {
    data::SyntheticSceneSpec s;
    s.identity_seed = identity;
    s.motion_seed = 1;
    s.background_seed = 2;
    s.frames = 1;
    s.size = size;
    return data::generate_synthetic_clip(s);
}

}  // namespace

TEST_CASE("fused cross-attention: hand-set 2x2 case against scalar loops") {
    const Tensor z = Tensor::from({1, 2, 2}, {0.3, -1.2, 0.8, 0.5});
    const Tensor zbg = Tensor::from({1, 2, 2}, {-0.4, 0.9, 1.1, 0.2});
    const Tensor fc = Tensor::from({1, 1, 2}, {0.7, -0.3});
    AttentionProjections p{Tensor::from({2, 2}, {1.0, 0.5, -0.25, 2.0}), Tensor::from({2, 2}, {0.3, -1.0, 0.8, 0.4}),
                           Tensor::from({2, 2}, {1.5, 0.2, -0.6, 1.0})};
    for (double lambda : {0.0, 1.0, 0.37}) {
        const auto ref = fused_oracle(z, zbg, fc, p, 1, lambda);
        const Tensor got = fused_cross_attention(z, zbg, fc, p, 1, lambda);
        REQUIRE(got.shape() == nn::Shape({1, 2, 2}));
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got.values()[i] - ref[i]) <= 1e-6);
    }
}

TEST_CASE("fused cross-attention: randomized oracle, lambda behaviour, shared W_K") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> sz(1, 6);
    for (int trial = 0; trial < 100; ++trial) {
        const int N = sz(rng), M = sz(rng), K = sz(rng), heads = 1 + trial % 2, C = 4, e = 3, d = 4;
        const Tensor z = random_tensor(rng, {1, N, C}), zbg = random_tensor(rng, {1, M, C});
        const Tensor fc = random_tensor(rng, {1, K, e});
        AttentionProjections p{random_tensor(rng, {C, d}), random_tensor(rng, {C, d}), random_tensor(rng, {e, d})};
        const double lambda = std::uniform_real_distribution<double>(-1, 2)(rng);
        const auto ref = fused_oracle(z, zbg, fc, p, heads, lambda);
        const Tensor got = fused_cross_attention(z, zbg, fc, p, heads, lambda);
        for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(got.values()[i] - ref[i]) <= 1e-9);

        // lambda = 0 and an absent background both give the self-key term
        const Tensor z0 = fused_cross_attention(z, zbg, fc, p, heads, 0.0);
        const Tensor self_only = fused_cross_attention(z, Tensor(), fc, p, heads, 1.0);
        REQUIRE(max_abs_diff(z0, self_only) == 0.0);

        // linear in lambda up to rounding of the final sum
        const Tensor z1 = fused_cross_attention(z, zbg, fc, p, heads, 1.0);
        for (std::size_t i = 0; i < got.size(); ++i) {
            const double lhs = got.values()[i] - z0.values()[i];
            const double rhs = lambda * (z1.values()[i] - z0.values()[i]);
            REQUIRE(std::abs(lhs - rhs) <= 1e-12 * (1 + std::abs(z1.values()[i]) + std::abs(z0.values()[i])));
        }

        // attention rows are distributions
        const auto probs = nn::attention_probs(nn::linear(z, p.w_q, {}), nn::linear(zbg, p.w_k, {}), heads);
        for (std::size_t r = 0; r < probs.size() / static_cast<std::size_t>(M); ++r) {
            double s = 0;
            for (int j = 0; j < M; ++j) s += probs[r * static_cast<std::size_t>(M) + static_cast<std::size_t>(j)];
            REQUIRE(std::abs(s - 1) <= 1e-6);
        }
    }

    // one W_K feeds both key streams: perturbing it moves both terms
    const Tensor z = random_tensor(rng, {1, 4, 4}), zbg = random_tensor(rng, {1, 5, 4});
    const Tensor fc = random_tensor(rng, {1, 3, 3});
    AttentionProjections p{random_tensor(rng, {4, 4}), random_tensor(rng, {4, 4}), random_tensor(rng, {3, 4})};
    AttentionProjections p2 = p;
    p2.w_k = random_tensor(rng, {4, 4});
    auto bg_term = [&](const AttentionProjections& pr) {
        return nn::sub(fused_cross_attention(z, zbg, fc, pr, 2, 1.0), fused_cross_attention(z, zbg, fc, pr, 2, 0.0));
    };
    CHECK(max_abs_diff(fused_cross_attention(z, zbg, fc, p, 2, 0.0), fused_cross_attention(z, zbg, fc, p2, 2, 0.0)) > 1e-6);
    CHECK(max_abs_diff(bg_term(p), bg_term(p2)) > 1e-6);

    AttentionProjections bad = p;
    bad.w_v = random_tensor(rng, {3, 5});
    CHECK_THROWS_AS(fused_cross_attention(z, zbg, fc, bad, 2, 1.0), InvalidInput);
    CHECK_THROWS_AS(fused_cross_attention(z, random_tensor(rng, {1, 5, 3}), fc, p, 2, 1.0), InvalidInput);
}

TEST_CASE("value alignment rows") {
    CHECK(align_value_rows(1, 4) == std::vector<int>{0, 0, 0, 0});
    CHECK(align_value_rows(4, 8) == std::vector<int>{0, 0, 1, 1, 2, 2, 3, 3});
    CHECK(align_value_rows(4, 2) == std::vector<int>{0, 2});
}

TEST_CASE("pose extractor: shape, sensitivity, determinism, divisibility") {
    nn::ParamStore store;
    std::mt19937_64 rng(1);
    const PoseExtractor pe = make_pose_extractor(store, rng, 16, 2);
    const auto rec = clip_for(4);
    const Tensor textured = codec::to_tensor({rec.pose_maps[0]});
    const Tensor black = Tensor::zeros({1, 64, 64, 3});
    const Tensor a = pe(textured);
    CHECK(a.shape() == nn::Shape({1, 8, 8, 16}));
    CHECK(max_abs_diff(a, pe(black)) > 0);
    CHECK(max_abs_diff(a, pe(textured)) == 0.0);
    CHECK_THROWS_AS(pe(Tensor::zeros({1, 60, 64, 3})), InvalidInput);
}

TEST_CASE("masks: downsampling and the masking operation") {
    Image m(8, 8, 1);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) m.at(y, x, 0) = 1;
    CHECK(downsample_mask(m, 2, 2) == std::vector<double>{0, 1, 0, 1});
    CHECK(downsample_mask(m, 8, 8) == m.data);
    CHECK_THROWS_AS(downsample_mask(Image(8, 8, 3), 2, 2), InvalidInput);

    std::mt19937_64 rng(9);
    ForegroundFeatureSet fs;
    for (int l = 0; l < 3; ++l) {
        const int h = 8 >> l;
        fs.features.push_back(random_tensor(rng, {1, h * h, 5}));
        fs.heights.push_back(h);
        fs.widths.push_back(h);
        fs.masks.push_back(downsample_mask(m, h, h));
    }
    const auto masked = apply_mask(fs);
    CHECK(masked.masked);
    for (int l = 0; l < 3; ++l) {
        const auto& f = fs.features[l];
        for (int t = 0; t < f.dim(1); ++t)
            for (int c = 0; c < 5; ++c) {
                const std::size_t i = static_cast<std::size_t>(t) * 5 + c;
                REQUIRE(masked.features[l].values()[i] == f.values()[i] * fs.masks[l][t]);
            }
    }
    auto ones = fs, zeros = fs;
    for (auto& mk : ones.masks) std::fill(mk.begin(), mk.end(), 1.0);
    for (auto& mk : zeros.masks) std::fill(mk.begin(), mk.end(), 0.0);
    const auto kept = apply_mask(ones), nulled = apply_mask(zeros);
    for (int l = 0; l < 3; ++l) {
        CHECK(max_abs_diff(kept.features[l], fs.features[l]) == 0.0);
        for (double v : nulled.features[l].values()) REQUIRE(v == 0.0);
    }
    auto missing = fs;
    missing.masks.pop_back();
    CHECK_THROWS_AS(apply_mask(missing), InvalidInput);
}

namespace {

// The reference pass rebuilt from primitive ops and raw parameters.
std::vector<Tensor> reference_oracle(const nn::ParamStore& s, const ReferenceConfig& cfg, const Tensor& latent) {
    auto P = [&](const std::string& n) { return s.get(n); };
    const Tensor e = unet::sinusoidal_embedding({0}, cfg.time_dim);
    const Tensor temb = nn::linear(nn::silu(nn::linear(e, P("ref.time1.w"), P("ref.time1.b"))), P("ref.time2.w"),
                                   P("ref.time2.b"));
    auto conv = [&](const Tensor& x, const std::string& n, int stride) {
        return nn::conv2d(x, P(n + ".w"), P(n + ".b"), 3, stride, 1);
    };
    std::vector<Tensor> out;
    Tensor h = conv(latent, "ref.conv_in", 1);
    for (std::size_t l = 0; l < cfg.channels.size(); ++l) {
        if (l > 0) h = conv(h, "ref.down" + std::to_string(l), 2);
        const std::string r = "ref.level" + std::to_string(l) + ".res", a = "ref.level" + std::to_string(l) + ".attn";
        Tensor x = nn::silu(nn::group_norm(h, cfg.groups, P(r + ".norm1.gamma"), P(r + ".norm1.beta")));
        x = conv(x, r + ".conv1", 1);
        x = nn::add_channel(x, nn::linear(nn::silu(temb), P(r + ".time.w"), P(r + ".time.b")));
        x = conv(nn::silu(nn::group_norm(x, cfg.groups, P(r + ".norm2.gamma"), P(r + ".norm2.beta"))), r + ".conv2", 1);
        h = nn::add(h, x);
        const int H = h.dim(1), W = h.dim(2), C = h.dim(3);
        const Tensor tok = nn::reshape(h, {1, H * W, C});
        const Tensor n = nn::layer_norm(tok, P(a + ".norm.gamma"), P(a + ".norm.beta"));
        const Tensor att = nn::attention(nn::linear(n, P(a + ".q.w"), {}), nn::linear(n, P(a + ".k.w"), {}),
                                         nn::linear(n, P(a + ".v.w"), {}), cfg.heads);
        const Tensor o = nn::add(tok, nn::linear(att, P(a + ".out.w"), P(a + ".out.b")));
        out.push_back(o);
        h = nn::reshape(o, {1, H, W, C});
    }
    return out;
}

}  // namespace

TEST_CASE("foreground encoder: layers, determinism, re-execution oracle, mask support") {
    nn::ParamStore store;
    std::mt19937_64 rng(2);
    const ReferenceConfig cfg;
    const ReferenceNet net = make_reference_net(store, rng, cfg);
    const codec::LatentCodec codec;
    const auto rec = clip_for(6);
    const Image fg = apply_image_mask(rec.frames[0], rec.masks[0]);
    const auto raw = encode_foreground(fg, rec.masks[0], codec, net);
    REQUIRE(raw.layers() == 3);
    for (int l = 0; l < 3; ++l) {
        CHECK(raw.heights[l] == 8 >> l);
        CHECK(raw.features[l].shape() == nn::Shape({1, (8 >> l) * (8 >> l), cfg.channels[l]}));
    }

    const Tensor latent = codec.encode_tensor(codec::to_tensor({fg}));
    const auto oracle = reference_oracle(store, cfg, latent);
    for (int l = 0; l < 3; ++l) CHECK(max_abs_diff(raw.features[l], oracle[l]) <= 1e-6);

    const Image blank(64, 64, 3);
    const auto z1 = encode_foreground(blank, rec.masks[0], codec, net);
    const auto z2 = encode_foreground(blank, rec.masks[0], codec, net);
    for (int l = 0; l < 3; ++l) CHECK(max_abs_diff(z1.features[l], z2.features[l]) == 0.0);
    CHECK_THROWS_AS(encode_foreground(fg, Image(32, 32, 1), codec, net), InvalidInput);

    // unmasked features leak outside the silhouette; masking removes them exactly
    const auto before = feature_stats(raw);
    const auto masked = apply_mask(raw);
    const auto after = feature_stats(masked);
    for (int l = 0; l < 3; ++l) {
        CHECK(before[l].energy_outside > 0);
        CHECK(after[l].energy_outside == 0.0);
        CHECK(after[l].energy_inside == doctest::Approx(before[l].energy_inside));
    }
    const auto path = std::filesystem::temp_directory_path() / "cfsynth_feature_stats.jsonl";
    dump_feature_stats(path, after);
    std::ifstream in(path);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("energy_outside").get<double>() == 0.0);
        ++n;
    }
    CHECK(n == 3);
    std::filesystem::remove(path);
}

TEST_CASE("background encoder: shapes, sensitivity, frozen codec") {
    nn::ParamStore store;
    std::mt19937_64 rng(3);
    const BackgroundEncoder enc = make_background_encoder(store, rng, 4, 32, 64);
    codec::LatentCodec codec;
    codec.freeze();
    const auto a = clip_for(1), b = clip_for(2);
    const auto one = encode_background({a.plates[0]}, codec, enc);
    REQUIRE(one.frames() == 1);
    CHECK(one.levels[0].shape() == nn::Shape({1, 8, 8, 32}));
    CHECK(one.levels[1].shape() == nn::Shape({1, 4, 4, 64}));
    const Image other = data::synthetic_plate(99, 64, 0);
    CHECK(max_abs_diff(one.levels[0], encode_background({other}, codec, enc).levels[0]) > 0);
    CHECK_THROWS_AS(encode_background(std::vector<Image>{}, codec, enc), InvalidInput);

    const auto codec_sum = codec.checksum();
    const auto bg_sum = store.checksum("background_encoder");
    store.set_trainable({"background_encoder"});
    const auto seq = encode_background({a.plates[0], b.plates[0]}, codec, enc);
    nn::backward(nn::add(nn::mean(nn::mul(seq.levels[0], seq.levels[0])), nn::mean(seq.levels[1])));
    nn::Adam opt(1e-3);
    opt.step(store);
    CHECK(codec.checksum() == codec_sum);
    CHECK(store.checksum("background_encoder") != bg_sum);
}

TEST_CASE("identity embedder: shape, determinism, distinct identities") {
    nn::ParamStore store;
    std::mt19937_64 rng(4);
    const ConvTokenEmbedder emb(store, rng, 4, 64);
    const auto a = clip_for(10), b = clip_for(11);
    const Image fa = apply_image_mask(a.frames[0], a.masks[0]), fb = apply_image_mask(b.frames[0], b.masks[0]);
    const Tensor ea = embed_identity(fa, emb);
    CHECK(ea.shape() == nn::Shape({1, 4, 64}));
    CHECK(max_abs_diff(ea, embed_identity(fa, emb)) == 0.0);
    for (double v : ea.values()) REQUIRE(std::isfinite(v));
    const Tensor eb = embed_identity(fb, emb);
    std::vector<double> ma(64, 0.0), mb(64, 0.0);
    for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 64; ++c) {
            ma[c] += ea.values()[k * 64 + c] / 4;
            mb[c] += eb.values()[k * 64 + c] / 4;
        }
    double dot = 0, na = 0, nb = 0;
    for (int c = 0; c < 64; ++c) {
        dot += ma[c] * mb[c];
        na += ma[c] * ma[c];
        nb += mb[c] * mb[c];
    }
    CHECK(dot / std::sqrt(na * nb) < 1.0);
    CHECK_THROWS_AS(embed_identity(Image(64, 64, 1), emb), InvalidInput);
}
