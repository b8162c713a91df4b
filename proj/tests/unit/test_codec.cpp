#include "cfsynth/codec.hpp"
#include "cfsynth/error.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

using namespace cfs;
using namespace cfs::codec;

namespace {

// Smooth blobs over a gradient.
std::vector<Image> toy_corpus(int n, int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Image> out;
    for (int k = 0; k < n; ++k) {
        Image im(size, size, 3);
        const double cx = u(rng) * size, cy = u(rng) * size, r = 4 + u(rng) * size / 4;
        double col[3] = {u(rng), u(rng), u(rng)}, bg[3] = {u(rng), u(rng), u(rng)};
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const bool in = (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r;
                for (int c = 0; c < 3; ++c)
                    im.at(y, x, c) = in ? col[c] : bg[c] * (0.5 + 0.5 * static_cast<double>(y) / size);
            }
        out.push_back(im);
    }
    return out;
}

}  // namespace

TEST_CASE("codec shape contract and determinism") {
    const LatentCodec codec;
    const auto imgs = toy_corpus(1, 64, 1);
    const LatentTensor z = codec.encode(imgs[0]);
    CHECK(z.height == 8);
    CHECK(z.width == 8);
    CHECK(z.channels == 4);
    CHECK(z.values.size() == 8 * 8 * 4);
    CHECK(codec.encode(imgs[0]) == z);
    const Image back = codec.decode(z);
    CHECK(back.height == 64);
    CHECK(back.width == 64);
    CHECK(back.channels == 3);
    for (double v : back.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    LatentTensor zero = z;
    std::fill(zero.values.begin(), zero.values.end(), 0.0);
    CHECK(codec.decode(zero) == codec.decode(zero));

    const auto wide = toy_corpus(1, 32, 2);
    Image rect(16, 32, 3);
    CHECK(codec.encode(rect).height == 2);
    CHECK_THROWS_AS(codec.encode(Image(60, 64, 3)), InvalidInput);
    CHECK_THROWS_AS(codec.encode(Image(64, 64, 1)), InvalidInput);
    LatentTensor bad = z;
    bad.channels = 3;
    CHECK_THROWS_AS(codec.decode(bad), InvalidInput);
    CHECK_THROWS_AS(LatentCodec(CodecConfig{6, 4, 32, 3}), InvalidInput);
}

TEST_CASE("codec training: zero steps, freeze contract, checkpoint") {
    LatentCodec codec({}, 3);
    const std::uint64_t before = codec.checksum();
    const auto corpus = toy_corpus(4, 32, 4);
    CodecTrainConfig cfg;
    cfg.steps = 0;
    train_codec(codec, corpus, cfg);
    CHECK(codec.frozen());
    CHECK(codec.checksum() == before);
    CHECK_THROWS_AS(train_codec(codec, corpus, cfg), std::logic_error);
    LatentCodec fresh;
    CHECK_THROWS_AS(train_codec(fresh, {}, cfg), InvalidInput);

    const auto path = std::filesystem::temp_directory_path() / "cfsynth_codec_test.ckpt";
    codec.save(path);
    const LatentCodec back = LatentCodec::load(path);
    CHECK(back.frozen());
    CHECK(back.checksum() == codec.checksum());
    CHECK(back.latent_scale() == codec.latent_scale());
    CHECK(back.encode(corpus[0]) == codec.encode(corpus[0]));
    std::filesystem::remove(path);
}

TEST_CASE("codec training lowers the reconstruction loss") {
    LatentCodec codec({}, 5);
    const auto corpus = toy_corpus(8, 32, 6);
    CodecTrainConfig cfg;
    cfg.steps = 200;
    cfg.seed = 1;
    const auto t0 = std::chrono::steady_clock::now();
    const auto losses = train_codec(codec, corpus, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("200 codec steps: " << secs << " s, loss " << losses.front() << " -> " << losses.back());
    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) {
        head += losses[i];
        tail += losses[losses.size() - 1 - i];
    }
    CHECK(tail < 0.5 * head);
    // Encoded corpus latents have unit variance after scaling.
    double s = 0, s2 = 0, n = 0;
    for (const auto& im : corpus)
        for (double v : codec.encode(im).values) {
            s += v;
            s2 += v * v;
            ++n;
        }
    CHECK(std::abs(s2 / n - (s / n) * (s / n) - 1.0) < 1e-9);
}
