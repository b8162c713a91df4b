#pragma once

#include "cfsynth/codec.hpp"
#include "cfsynth/conditioning.hpp"
#include "cfsynth/dataio.hpp"
#include "cfsynth/denoiser.hpp"
#include "cfsynth/diffusion.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

// Model assembly, phased training, windowed synthesis.
namespace cfs::pipeline {

struct ModelConfig {
    int image_size = 64;
    codec::CodecConfig codec;
    diffusion::DenoiserConfig denoiser;
    int identity_tokens = 4;
    int identity_width = 32;
    std::string schedule = "linear-beta";
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double lambda = 1.0;
    std::uint64_t init_seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static ModelConfig from_json(const nlohmann::json& j);
    // FNV-1a of the canonical JSON form, as 16 hex digits.
    std::string hash() const;
};

// Parameter groups of the model store.
inline const std::set<std::string> kPhase1Groups{"pose_extractor", "reference_spatial_attention",
                                                 "denoiser_cross_attention", "background_encoder"};
inline const std::set<std::string> kPhase2Groups{"temporal"};
// Groups trained by phase 0, the from-scratch stand-in for pretrained
// weights: everything except the temporal layers.
std::set<std::string> phase_groups(int phase);

struct Model {
    ModelConfig config;
    codec::LatentCodec codec;
    nn::ParamStore store;
    cond::PoseExtractor pose;
    cond::ReferenceNet reference;
    cond::BackgroundEncoder background;
    cond::ConvTokenEmbedder identity;
    diffusion::Denoiser denoiser;
    diffusion::NoiseSchedule schedule;
    int phase = -1;  // last completed training phase; -1 untrained
    long step = 0;   // optimizer steps taken across phases

    explicit Model(const ModelConfig& config);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    // Codec and model parameters, config and phase in one checkpoint.
    void save(const std::filesystem::path& path) const;
    static std::unique_ptr<Model> load(const std::filesystem::path& path);
};

// Reads the config hash recorded in a model checkpoint.
std::string checkpoint_config_hash(const std::filesystem::path& path);

// --- Training ---

struct TrainConfig {
    int phase = 1;  // 0 base, 1 spatial, 2 temporal
    int steps = 100;
    int batch_size = 1;
    double lr = 1e-3;
    bool cosine_decay = true;  // decay to 10% of lr over the run
    int window = 8;
    double flip_probability = 0.5;
    int reference_frame = 0;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0 keeps only the final checkpoint
    std::filesystem::path out_dir;  // checkpoints and train_log.jsonl; empty writes nothing

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
    std::vector<double> losses;
    std::map<std::string, std::uint64_t> checksums_before, checksums_after;
    std::filesystem::path checkpoint;  // empty without out_dir
};

// Codec reconstruction training on clip frames and plates, then freeze.
std::vector<double> train_codec_on_clips(Model& model, const std::vector<data::ClipRecord>& clips,
                                         const codec::CodecTrainConfig& cfg);

// Runs cfg.steps optimizer steps on exactly the groups of cfg.phase.
// Phase 1 and 2 need a frozen codec; phase 2 needs a model whose phase is
// at least 1.
TrainResult train(Model& model, const std::vector<data::ClipRecord>& clips, const TrainConfig& cfg);

// Mean noise-prediction loss over the first window of each clip at
// `grid` evenly spaced timesteps with fixed noise. No flip.
double evaluation_loss(const Model& model, const std::vector<data::ClipRecord>& clips, int window, int grid,
                       std::uint64_t seed);

// --- Synthesis ---

struct InferenceJob {
    Image reference;       // RGB
    Image reference_mask;  // single channel, 0/1
    Image texture;         // completed UV texture, RGB
    body::BodyMesh mesh = body::make_humanoid();
    std::vector<body::BodyModelState> states;
    std::vector<body::CameraPose> cameras;
    std::vector<Image> backgrounds;
    int window = 8;
    int stride = 4;
    std::uint64_t seed = 0;
    int sampler_steps = 20;
    double eta = 0.0;

    int frames() const { return static_cast<int>(states.size()); }
    void validate(int image_size) const;
};

// Job file: JSON with paths relative to the file (reference, mask, texture,
// states, trajectory, background_dir; optional mesh) and window, stride,
// seed, steps, eta.
InferenceJob load_job(const std::filesystem::path& path);

// Writes states.json, trajectory.json and job.json next to a clip written
// by data::write_clip, so that the clip's own motion can be synthesized.
// The reference is frame 0 and the backgrounds are the clip's plates.
std::filesystem::path write_clip_job(const data::ClipRecord& clip, const std::filesystem::path& clip_dir,
                                     const nlohmann::json& settings = nlohmann::json::object());

// First frames of the windows: k * stride while the window fits, then one
// more window ending at the last frame if frames remain uncovered. The
// window length is min(window, frames).
std::vector<int> window_starts(int frames, int window, int stride);

// Per-frame mean of the window outputs [F',h,w,c] that cover it. Throws when
// a frame is covered by no window.
nn::Tensor aggregate_windows(const std::vector<nn::Tensor>& outputs, const std::vector<int>& starts, int frames);
nn::Tensor aggregate_windows(const std::vector<nn::Tensor>& outputs, int frames, int window, int stride);

struct SynthesisResult {
    std::vector<Image> frames;
    std::vector<body::PoseMap> pose_maps;
    std::vector<int> window_starts;
};

// Pose latents, masked foreground features, identity tokens and background
// latents for one window or clip. Keeps the autograd graph of the model
// modules; the codec is used frozen.
cond::ConditioningBundle condition(const Model& model, const std::vector<Image>& pose_maps,
                                   const Image& reference, const Image& reference_mask,
                                   const std::vector<Image>& backgrounds);

// Stage failures surface as StageError naming the stage.
SynthesisResult synthesize(const Model& model, const InferenceJob& job);

// Writes frame_XXXX.png and manifest.json (frames, seed, config hash).
void write_synthesis(const std::filesystem::path& dir, const SynthesisResult& result, const InferenceJob& job,
                     const Model& model);

// Pose-map pixels where covered, background elsewhere.
Image composite_preview(const body::PoseMap& pose_map, const Image& background);

}  // namespace cfs::pipeline
