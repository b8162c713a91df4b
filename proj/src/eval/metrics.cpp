#include "cfsynth/evalkit.hpp"

#include "cfsynth/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace cfs::eval {

namespace {

void check_pair(const Image& a, const Image& b) {
    require(!a.empty() && a.same_dims(b), "metric inputs differ in size: " + std::to_string(a.height) + "x" +
                                              std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                                              std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                                              std::to_string(b.channels));
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<double> gaussian_window(int n, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(n));
    double s = 0;
    for (int i = 0; i < n; ++i) {
        const double d = i - (n - 1) / 2.0;
        w[i] = std::exp(-d * d / (2 * sigma * sigma));
        s += w[i];
    }
    for (double& x : w) x /= s;
    return w;
}

// Separable valid-mode filter of a single-channel image.
std::vector<double> filter_valid(const std::vector<double>& img, int H, int W, const std::vector<double>& w) {
    const int n = static_cast<int>(w.size());
    const int Ho = H - n + 1, Wo = W - n + 1;
    std::vector<double> rows(static_cast<std::size_t>(H) * Wo, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < Wo; ++x) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += w[k] * img[static_cast<std::size_t>(y) * W + x + k];
            rows[static_cast<std::size_t>(y) * Wo + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(Ho) * Wo, 0.0);
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            double s = 0;
            for (int k = 0; k < n; ++k) s += w[k] * rows[static_cast<std::size_t>(y + k) * Wo + x];
            out[static_cast<std::size_t>(y) * Wo + x] = s;
        }
    return out;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::VectorXd& mean) {
    mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - mean.transpose();
    return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd stack(const std::vector<Eigen::VectorXd>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
}

}  // namespace

double l1_error(const Image& pred, const Image& gt) {
    check_pair(pred, gt);
    double s = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) s += std::abs(pred.data[i] - gt.data[i]);
    return s / static_cast<double>(pred.data.size());
}

double psnr(const Image& pred, const Image& gt) {
    check_pair(pred, gt);
    double s = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - gt.data[i];
        s += d * d;
    }
    const double mse = s / static_cast<double>(pred.data.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Image to_gray(const Image& img) {
    require(img.channels == 1 || img.channels == 3, "expected a 1- or 3-channel image");
    if (img.channels == 1) return img;
    Image g(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g.at(y, x, 0) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    return g;
}

double ssim(const Image& pred, const Image& gt, int window, double k1, double k2) {
    check_pair(pred, gt);
    require(window >= 1 && pred.height >= window && pred.width >= window,
            "SSIM needs images of at least " + std::to_string(window) + "x" + std::to_string(window));
    const Image a = to_gray(pred), b = to_gray(gt);
    const int H = a.height, W = a.width;
    const std::size_t n = static_cast<std::size_t>(H) * W;
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a.data[i] * a.data[i];
        bb[i] = b.data[i] * b.data[i];
        ab[i] = a.data[i] * b.data[i];
    }
    const auto w = gaussian_window(window, 1.5);
    const auto mu_a = filter_valid(a.data, H, W, w), mu_b = filter_valid(b.data, H, W, w);
    const auto e_aa = filter_valid(aa, H, W, w), e_bb = filter_valid(bb, H, W, w), e_ab = filter_valid(ab, H, W, w);
    const double c1 = k1 * k1, c2 = k2 * k2;
    double total = 0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i], vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    require(a.rows() >= 2 && b.rows() >= 2, "feature distance needs at least 2 samples per set");
    require(a.cols() == b.cols() && a.cols() > 0, "feature sets differ in dimension");
    Eigen::VectorXd m1, m2;
    const Eigen::MatrixXd s1 = covariance(a, m1), s2 = covariance(b, m2);
    // tr sqrt(S1 S2) == tr sqrt(S1^1/2 S2 S1^1/2), which is symmetric PSD.
    const Eigen::MatrixXd r1 = psd_sqrt(s1);
    const Eigen::MatrixXd cross = psd_sqrt(r1 * s2 * r1);
    const double d = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    return std::max(d, 0.0);
}

RandomProjectionEmbedder::RandomProjectionEmbedder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    require(dim >= 1, "embedding dimension must be positive");
}

Eigen::VectorXd RandomProjectionEmbedder::embed(const Image& frame) const {
    require(!frame.empty(), "cannot embed an empty frame");
    const std::size_t n = frame.data.size();
    if (cached_size_ != n) {
        std::mt19937_64 rng(seed_ ^ (n * 0x9E3779B97F4A7C15ull));
        std::normal_distribution<double> d(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
        proj_.resize(dim_, static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < proj_.size(); ++i) proj_.data()[i] = d(rng);
        cached_size_ = n;
    }
    Eigen::VectorXd x(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) x[static_cast<Eigen::Index>(i)] = frame.data[i] - 0.5;
    return (proj_ * x).array().tanh();
}

double feature_distance(const std::vector<Image>& pred_set, const std::vector<Image>& gt_set,
                        const Embedder& embedder) {
    require(pred_set.size() >= 2 && gt_set.size() >= 2, "feature distance needs at least 2 samples per set");
    std::vector<Eigen::VectorXd> a, b;
    for (const auto& f : pred_set) a.push_back(embedder.embed(f));
    for (const auto& f : gt_set) b.push_back(embedder.embed(f));
    return frechet_distance(stack(a), stack(b));
}

Eigen::VectorXd embed_clip(const std::vector<Image>& clip, const Embedder& embedder) {
    require(!clip.empty(), "cannot embed an empty clip");
    const int d = embedder.dim();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * d);
    for (const auto& f : clip) out.head(d) += embedder.embed(f);
    out.head(d) /= static_cast<double>(clip.size());
    for (std::size_t i = 1; i < clip.size(); ++i) {
        require(clip[i].same_dims(clip[0]), "clip frames differ in size");
        Image diff = clip[i];
        for (std::size_t k = 0; k < diff.data.size(); ++k) diff.data[k] = 0.5 + clip[i].data[k] - clip[i - 1].data[k];
        out.tail(d) += embedder.embed(diff);
    }
    if (clip.size() > 1) out.tail(d) /= static_cast<double>(clip.size() - 1);
    return out;
}

double video_feature_distance(const std::vector<std::vector<Image>>& pred_clips,
                              const std::vector<std::vector<Image>>& gt_clips, const Embedder& embedder) {
    require(pred_clips.size() >= 2 && gt_clips.size() >= 2, "video feature distance needs at least 2 clips per set");
    std::vector<Eigen::VectorXd> a, b;
    for (const auto& c : pred_clips) a.push_back(embed_clip(c, embedder));
    for (const auto& c : gt_clips) b.push_back(embed_clip(c, embedder));
    return frechet_distance(stack(a), stack(b));
}

MetricReport evaluate_clip(const std::vector<Image>& pred, const std::vector<Image>& gt, const std::string& clip_id,
                           const Embedder* embedder) {
    require(!pred.empty(), "no frames to evaluate");
    require(pred.size() == gt.size(), "prediction has " + std::to_string(pred.size()) + " frames, ground truth has " +
                                          std::to_string(gt.size()));
    MetricReport r;
    r.clip_id = clip_id;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        r.l1.push_back(l1_error(pred[i], gt[i]));
        r.psnr.push_back(psnr(pred[i], gt[i]));
        r.ssim.push_back(ssim(pred[i], gt[i]));
    }
    r.mean_l1 = mean_of(r.l1);
    r.mean_psnr = mean_of(r.psnr);
    r.mean_ssim = mean_of(r.ssim);
    if (embedder && pred.size() >= 2) r.fid_vid = feature_distance(pred, gt, *embedder);
    return r;
}

std::string report_jsonl(const MetricReport& report) {
    using ojson = nlohmann::ordered_json;
    std::ostringstream os;
    for (std::size_t i = 0; i < report.l1.size(); ++i) {
        ojson rec;
        rec["clip_id"] = report.clip_id;
        rec["frame"] = i;
        rec["l1"] = report.l1[i];
        rec["psnr"] = report.psnr[i];
        rec["ssim"] = report.ssim[i];
        os << rec.dump() << '\n';
    }
    auto opt = [](const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); };
    ojson s;
    s["clip_id"] = report.clip_id;
    s["frames"] = report.l1.size();
    s["l1"] = report.mean_l1;
    s["psnr"] = report.mean_psnr;
    s["ssim"] = report.mean_ssim;
    s["lpips"] = opt(report.lpips);
    s["fid_vid"] = opt(report.fid_vid);
    s["fvd"] = opt(report.fvd);
    os << ojson{{"summary", s}}.dump() << '\n';
    return os.str();
}

void write_report(const std::filesystem::path& path, const MetricReport& report) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << report_jsonl(report);
}

}  // namespace cfs::eval
