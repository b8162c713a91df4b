#include "cfsynth/error.hpp"
#include "cfsynth/nn/checkpoint.hpp"
#include "cfsynth/nn/ops.hpp"
#include "cfsynth/nn/params.hpp"
#include "gradcheck.hpp"

#include <doctest.h>

#include <filesystem>

using namespace cfs;
using namespace cfs::nn;
using cfs::testing::max_grad_error;
using cfs::testing::random_tensor;

namespace {

// Weighted sum so every output element carries a distinct gradient.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    Tensor w = random_tensor(rng, y.shape(), false);
    return sum(mul(y, w));
}

}  // namespace

TEST_CASE("elementwise and shape ops match finite differences") {
    std::mt19937_64 rng(1);
    Tensor a = random_tensor(rng, {2, 3, 4});
    Tensor b = random_tensor(rng, {2, 3, 4});
    CHECK(max_grad_error([&] { return probe(add(mul(a, b), sub(a, scale(b, 0.5)))); }, {a, b}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(silu(a)); }, {a}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(sigmoid(a)); }, {a}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(permute01(a)); }, {a}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(concat(a, b, 1)); }, {a, b}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(concat(a, b, 2)); }, {a, b}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(slice0(a, 1, 2)); }, {a}) < 1e-6);
    CHECK(max_grad_error([&] { return mse(a, b); }, {a, b}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(gather_rows(a, {2, 0, 0, 1})); }, {a}) < 1e-6);
    Tensor r = random_tensor(rng, {1, 3, 2});
    CHECK(max_grad_error([&] { return probe(repeat0(r, 3)); }, {r}) < 1e-6);
    std::vector<double> m{1, 0, 1, 1, 0, 0};
    CHECK(max_grad_error([&] { return probe(mask_tokens(a, m)); }, {a}) < 1e-6);
}

TEST_CASE("linear and conv2d gradients") {
    std::mt19937_64 rng(2);
    Tensor x = random_tensor(rng, {2, 5, 6, 3});
    Tensor w = random_tensor(rng, {27, 4});
    Tensor b = random_tensor(rng, {4});
    for (int stride : {1, 2}) {
        CHECK(max_grad_error([&] { return probe(conv2d(x, w, b, 3, stride, 1)); }, {x, w, b}) < 1e-6);
    }
    Tensor w1 = random_tensor(rng, {3, 2});
    CHECK(max_grad_error([&] { return probe(conv2d(x, w1, Tensor(), 1, 1, 0)); }, {x, w1}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(linear(x, w1, Tensor())); }, {x, w1}) < 1e-6);
    CHECK(max_grad_error([&] { return probe(upsample2x(x)); }, {x}) < 1e-6);
}

TEST_CASE("conv2d matches a direct loop") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor(rng, {1, 5, 4, 2}, false);
    Tensor w = random_tensor(rng, {18, 3}, false);
    Tensor y = conv2d(x, w, Tensor(), 3, 2, 1);
    REQUIRE(y.shape() == Shape{1, 3, 2, 3});
    for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 2; ++ox)
            for (int co = 0; co < 3; ++co) {
                double acc = 0;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (int c = 0; c < 2; ++c) {
                            const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
                            acc += x.values()[(iy * 4 + ix) * 2 + c] * w.values()[((ky * 3 + kx) * 2 + c) * 3 + co];
                        }
                CHECK(y.values()[(oy * 2 + ox) * 3 + co] == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("normalization gradients") {
    std::mt19937_64 rng(4);
    Tensor x = random_tensor(rng, {2, 3, 3, 8});
    Tensor g = random_tensor(rng, {8});
    Tensor b = random_tensor(rng, {8});
    CHECK(max_grad_error([&] { return probe(group_norm(x, 4, g, b)); }, {x, g, b}) < 1e-5);
    CHECK(max_grad_error([&] { return probe(layer_norm(x, g, b)); }, {x, g, b}) < 1e-5);
}

TEST_CASE("attention gradients, including broadcast keys and values") {
    std::mt19937_64 rng(5);
    Tensor q = random_tensor(rng, {3, 4, 6});
    Tensor k = random_tensor(rng, {3, 5, 6});
    Tensor v = random_tensor(rng, {3, 5, 4});
    CHECK(max_grad_error([&] { return probe(attention(q, k, v, 2)); }, {q, k, v}) < 1e-6);
    Tensor k1 = random_tensor(rng, {1, 5, 6});
    Tensor v1 = random_tensor(rng, {1, 5, 4});
    CHECK(max_grad_error([&] { return probe(attention(q, k1, v1, 2)); }, {q, k1, v1}) < 1e-6);
}

TEST_CASE("attention rows are stochastic") {
    std::mt19937_64 rng(6);
    Tensor q = random_tensor(rng, {2, 7, 8}, false, 3.0);
    Tensor k = random_tensor(rng, {2, 9, 8}, false, 3.0);
    auto p = attention_probs(q, k, 2);
    for (std::size_t r = 0; r < p.size() / 9; ++r) {
        double s = 0;
        for (int j = 0; j < 9; ++j) s += p[r * 9 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("no-grad guard stops graph recording") {
    Tensor a = Tensor::full({2}, 1.0, true);
    {
        NoGradGuard guard;
        CHECK_FALSE(add(a, a).requires_grad());
    }
    CHECK(add(a, a).requires_grad());
}

TEST_CASE("param store groups, checksums, and Adam respect trainability") {
    ParamStore store;
    std::mt19937_64 rng(7);
    Tensor w1 = store.add("a.w", "alpha", {3}, normal_init(rng, 3, 1.0));
    Tensor w2 = store.add("b.w", "beta", {2}, normal_init(rng, 2, 1.0));
    CHECK_THROWS_AS(store.add("a.w", "beta", {1}, {0.0}), InvalidInput);
    store.set_trainable({"alpha"});
    const auto before = store.checksums();
    backward(add(sum(w1), sum(scale(w2, 2.0))));
    Adam opt(0.1);
    opt.step(store);
    const auto after = store.checksums();
    CHECK(before.at("alpha") != after.at("alpha"));
    CHECK(before.at("beta") == after.at("beta"));
}

TEST_CASE("checkpoint container round trip") {
    ParamStore store;
    std::mt19937_64 rng(8);
    store.add("x", "g1", {2, 3}, normal_init(rng, 6, 1.0));
    store.add("y", "g2", {4}, normal_init(rng, 4, 1.0));
    Checkpoint ck;
    ck.metadata["scale_factor"] = 8;
    ck.arrays = export_params(store);
    const auto path = std::filesystem::temp_directory_path() / "cfsynth_nn_ckpt.bin";
    write_checkpoint(path, ck);
    Checkpoint back = read_checkpoint(path);
    CHECK(back.metadata["scale_factor"] == 8);
    ParamStore other;
    other.add("x", "g1", {2, 3}, std::vector<double>(6, 0.0));
    other.add("y", "g2", {4}, std::vector<double>(4, 0.0));
    import_params(other, back);
    CHECK(other.checksums() == store.checksums());
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_checkpoint(path), InvalidInput);
}
