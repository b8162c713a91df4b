#include "cfsynth/error.hpp"
#include "cfsynth/evalkit.hpp"

#include "metric_oracles.hpp"

#include <doctest.h>
#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <sstream>

using namespace cfs;
using namespace cfs::eval;
using cfs::testing::frechet_oracle;
using cfs::testing::ssim_oracle;

namespace {

Image random_image(std::mt19937_64& rng, int h, int w, int c = 3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w, c);
    for (double& v : img.data) v = u(rng);
    return img;
}

}  // namespace

TEST_CASE("l1 error") {
    std::mt19937_64 rng(1);
    const Image a = random_image(rng, 9, 7), b = random_image(rng, 9, 7);
    CHECK(l1_error(a, a) == 0.0);
    CHECK(l1_error(Image(4, 4, 3, 0.0), Image(4, 4, 3, 1.0)) == 1.0);
    double s = 0;
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 7; ++x)
            for (int c = 0; c < 3; ++c) s += std::abs(a.at(y, x, c) - b.at(y, x, c));
    CHECK(std::abs(l1_error(a, b) - s / (9 * 7 * 3)) < 1e-9);
    CHECK(l1_error(a, b) == l1_error(b, a));
    CHECK_THROWS_AS(l1_error(a, Image(9, 8, 3)), InvalidInput);
}

TEST_CASE("psnr") {
    std::mt19937_64 rng(2);
    const Image a = random_image(rng, 8, 8), b = random_image(rng, 8, 8);
    CHECK(psnr(a, a) == kPsnrCap);
    Image c = a;
    for (double& v : c.data) v = 0.3;
    Image d = c;
    for (double& v : d.data) v = 0.4;
    CHECK(std::abs(psnr(c, d) - 20.0) < 1e-9);
    double s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    CHECK(std::abs(psnr(a, b) - 10 * std::log10(a.data.size() / s)) < 1e-6);
    CHECK(psnr(a, b) >= 0);
}

TEST_CASE("ssim") {
    std::mt19937_64 rng(3);
    const Image a = random_image(rng, 20, 17), b = random_image(rng, 20, 17);
    CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-9);
    const double v = ssim(a, b);
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);

    Image bin(16, 16, 3), inv(16, 16, 3);
    std::bernoulli_distribution coin(0.5);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const double t = coin(rng) ? 1.0 : 0.0;
            for (int c = 0; c < 3; ++c) {
                bin.at(y, x, c) = t;
                inv.at(y, x, c) = 1.0 - t;
            }
        }
    CHECK(ssim(inv, bin) < 0.5);
    CHECK(std::abs(ssim(inv, bin) - ssim_oracle(inv, bin)) < 1e-9);

    // Constant patches: only the luminance term survives.
    const double p = 0.2, q = 0.7, c1 = 1e-4;
    CHECK(std::abs(ssim(Image(12, 12, 3, p), Image(12, 12, 3, q)) - (2 * p * q + c1) / (p * p + q * q + c1)) < 1e-9);
    CHECK_THROWS_AS(ssim(Image(10, 30, 3), Image(10, 30, 3)), InvalidInput);
}

TEST_CASE("frechet distance") {
    Eigen::MatrixXd a(2, 1), b(2, 1);
    a << -1, 1;
    b << 0, 2;
    // Both fits have variance 2; means differ by 1.
    CHECK(std::abs(frechet_distance(a, b) - 1.0) < 1e-12);
    CHECK(frechet_distance(a, a) < 1e-6);

    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::MatrixXd x(12, 3), y(15, 3);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
        for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = 0.5 * n(rng) + 0.3;
        CHECK(std::abs(frechet_distance(x, y) - frechet_oracle(x, y)) < 1e-5);
        CHECK(std::abs(frechet_distance(x, y) - frechet_distance(y, x)) < 1e-9);
    }
    CHECK_THROWS_AS(frechet_distance(Eigen::MatrixXd(1, 3), Eigen::MatrixXd(4, 3)), InvalidInput);
}

TEST_CASE("feature distance with the random projection embedder") {
    std::mt19937_64 rng(5);
    std::vector<Image> s1, s2;
    for (int i = 0; i < 4; ++i) s1.push_back(random_image(rng, 8, 8));
    for (int i = 0; i < 4; ++i) s2.push_back(random_image(rng, 8, 8));
    const RandomProjectionEmbedder emb(6, 9);
    CHECK(feature_distance(s1, s1, emb) < 1e-6);
    CHECK(feature_distance(s1, s2, emb) > 0);
    CHECK(std::abs(feature_distance(s1, s2, emb) - feature_distance(s2, s1, emb)) < 1e-9);
    CHECK(emb.embed(s1[0]) == RandomProjectionEmbedder(6, 9).embed(s1[0]));
    CHECK_THROWS_AS(feature_distance({s1[0]}, s2, emb), InvalidInput);
    CHECK(video_feature_distance({s1, s2}, {s1, s2}, emb) < 1e-6);
}

TEST_CASE("clip report") {
    std::mt19937_64 rng(6);
    std::vector<Image> p, g;
    for (int i = 0; i < 3; ++i) {
        p.push_back(random_image(rng, 16, 16));
        g.push_back(random_image(rng, 16, 16));
    }
    const RandomProjectionEmbedder emb;
    const MetricReport r = evaluate_clip(p, g, "clip7", &emb);
    CHECK(r.l1.size() == 3);
    CHECK(std::abs(r.mean_psnr - (r.psnr[0] + r.psnr[1] + r.psnr[2]) / 3) < 1e-12);
    REQUIRE(r.fid_vid.has_value());
    std::istringstream in(report_jsonl(r));
    std::string line;
    std::vector<nlohmann::json> recs;
    while (std::getline(in, line)) recs.push_back(nlohmann::json::parse(line));
    REQUIRE(recs.size() == 4);
    CHECK(recs[1]["frame"] == 1);
    const auto& s = recs[3]["summary"];
    CHECK(s["lpips"].is_null());
    CHECK(s["fvd"].is_null());
    CHECK(s["ssim"].get<double>() == r.mean_ssim);
    CHECK_THROWS_AS(evaluate_clip(p, {g[0]}, "x"), InvalidInput);
}
