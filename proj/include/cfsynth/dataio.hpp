#pragma once

#include "cfsynth/body/body.hpp"
#include "cfsynth/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace cfs::data {

enum class CameraPath { fixed, orbit, pan };

CameraPath parse_camera_path(const std::string& name);
std::string to_string(CameraPath path);

struct SyntheticSceneSpec {
    std::uint64_t identity_seed = 0;    // texture pattern
    std::uint64_t motion_seed = 0;      // joint trajectories
    std::uint64_t background_seed = 0;  // plate pattern
    CameraPath camera = CameraPath::fixed;
    int frames = 8;
    int size = 64;
    double motion_amplitude = 0.5;  // radians; 0 keeps the rest pose
    int plate_shift = 1;            // plate translation in pixels per frame
    int texture_size = 64;

    void validate() const;

    // Keys as in the field names, camera by name; unknown keys are rejected.
    static SyntheticSceneSpec from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
};

// Frames, masks (single channel, 0/1), plates and pose maps share one size.
// The pose maps are rendered with the completed texture recovered from
// frame 0; `texture` holds that completed texture.
struct ClipRecord {
    std::string clip_id;
    std::string identity_id;
    std::vector<Image> frames, masks, plates, pose_maps;
    std::vector<body::BodyModelState> states;
    std::vector<body::CameraPose> cameras;
    Image texture;

    // Paths relative to the manifest directory; empty for in-memory clips.
    std::vector<std::string> frame_paths, mask_paths, plate_paths, pose_map_paths;

    int length() const { return static_cast<int>(frames.size()); }
    void validate() const;
    bool same_content(const ClipRecord& other) const;
};

body::RenderOptions synthetic_render_options(int size);
body::Intrinsics synthetic_intrinsics(int size);

// Texture, plate and motion generators behind generate_synthetic_clip.
Image synthetic_texture(std::uint64_t identity_seed, int size);
Image synthetic_plate(std::uint64_t background_seed, int size, int shift);
std::vector<body::BodyModelState> synthetic_motion(std::uint64_t motion_seed, int frames, double amplitude,
                                                   int joint_count);
std::vector<body::CameraPose> synthetic_cameras(CameraPath path, int frames, int size);

ClipRecord generate_synthetic_clip(const SyntheticSceneSpec& spec);

// frame * mask + plate * (1 - mask), per pixel.
Image composite(const Image& foreground, const Image& plate, const Image& mask);

// Writes PNG assets and <dir>/manifest.json; returns the manifest path.
// A non-null `generator` is stored under that key (seeds, spec).
std::filesystem::path write_clip(const ClipRecord& record, const std::filesystem::path& dir,
                                 const nlohmann::json& generator = nullptr);
ClipRecord load_clip(const std::filesystem::path& manifest_path);

// --- Batches ---

struct WindowRef {
    int clip = 0;
    int start = 0;
    bool flipped = false;
};

struct Sample {
    WindowRef ref;
    std::vector<Image> frames, masks, plates, pose_maps;
    Image reference, reference_mask;  // reference frame * mask, and its mask
};

struct BatchOptions {
    int window = 8;
    int batch_size = 1;
    double flip_probability = 0.5;
    int reference_frame = 0;
};

// Contiguous windows from records long enough for them; shorter records are
// skipped with a warning. Throws when no record is usable.
std::vector<WindowRef> sample_windows(const std::vector<ClipRecord>& records, const BatchOptions& options,
                                      std::mt19937_64& rng);
Sample materialize(const std::vector<ClipRecord>& records, const WindowRef& ref, int window, int reference_frame);
std::vector<Sample> make_batch(const std::vector<ClipRecord>& records, const BatchOptions& options,
                               std::mt19937_64& rng);

}  // namespace cfs::data
