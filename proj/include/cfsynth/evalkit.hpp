#pragma once

#include "cfsynth/image.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cfs::eval {

inline constexpr double kPsnrCap = 100.0;

// Mean absolute difference over all pixels and channels.
double l1_error(const Image& pred, const Image& gt);

// 10 log10(1 / MSE), or kPsnrCap when the images are identical.
double psnr(const Image& pred, const Image& gt);

// Mean SSIM over every full window position (Gaussian window, sigma 1.5) on
// the luma channel (0.299, 0.587, 0.114); dynamic range 1.
double ssim(const Image& pred, const Image& gt, int window = 11, double k1 = 0.01, double k2 = 0.03);

// Luma of an RGB image, or a copy of a single-channel one.
Image to_gray(const Image& img);

// Frechet distance between Gaussian fits of two sample sets (rows = samples).
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual Eigen::VectorXd embed(const Image& frame) const = 0;
    virtual int dim() const = 0;
};

// Fixed Gaussian projection of the flattened, centered pixels followed by
// tanh. The projection depends only on (seed, input size).
class RandomProjectionEmbedder final : public Embedder {
public:
    explicit RandomProjectionEmbedder(int dim = 16, std::uint64_t seed = 1234);
    Eigen::VectorXd embed(const Image& frame) const override;
    int dim() const override { return dim_; }

private:
    int dim_;
    std::uint64_t seed_;
    mutable std::size_t cached_size_ = 0;
    mutable Eigen::MatrixXd proj_;
};

// Embeds every item and returns the Frechet distance of the two sets.
double feature_distance(const std::vector<Image>& pred_set, const std::vector<Image>& gt_set,
                        const Embedder& embedder);

// Clip-level embedding: mean frame embedding followed by the mean embedding
// of consecutive frame differences.
Eigen::VectorXd embed_clip(const std::vector<Image>& clip, const Embedder& embedder);

double video_feature_distance(const std::vector<std::vector<Image>>& pred_clips,
                              const std::vector<std::vector<Image>>& gt_clips, const Embedder& embedder);

struct MetricReport {
    std::string clip_id;
    std::vector<double> l1, psnr, ssim;
    double mean_l1 = 0, mean_psnr = 0, mean_ssim = 0;
    std::optional<double> lpips, fid_vid, fvd;
};

// Per-frame L1/PSNR/SSIM with means. With an embedder and at least two frames
// per side, fid_vid is the frame-level feature distance.
MetricReport evaluate_clip(const std::vector<Image>& pred, const std::vector<Image>& gt, const std::string& clip_id,
                           const Embedder* embedder = nullptr);

// One JSON record per frame, then a summary record with columns
// l1, psnr, ssim, lpips, fid_vid, fvd (missing values are null).
void write_report(const std::filesystem::path& path, const MetricReport& report);
std::string report_jsonl(const MetricReport& report);

}  // namespace cfs::eval
