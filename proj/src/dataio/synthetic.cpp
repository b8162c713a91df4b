#include "cfsynth/dataio.hpp"

#include "cfsynth/error.hpp"

#include <cmath>
#include <numbers>

namespace cfs::data {

using body::Vec3;

CameraPath parse_camera_path(const std::string& name) {
    if (name == "static" || name == "fixed") return CameraPath::fixed;
    if (name == "orbit") return CameraPath::orbit;
    if (name == "pan") return CameraPath::pan;
    reject("unknown camera path '" + name + "' (expected static, orbit, pan)");
}

std::string to_string(CameraPath path) {
    switch (path) {
        case CameraPath::orbit:
            return "orbit";
        case CameraPath::pan:
            return "pan";
        case CameraPath::fixed:
            break;
    }
    return "static";
}

void SyntheticSceneSpec::validate() const {
    require(frames >= 1, "a synthetic clip needs at least one frame");
    require(size >= 8 && size % 8 == 0, "frame size must be a positive multiple of 8");
    require(texture_size >= 16 && texture_size % 4 == 0, "texture size must be a multiple of 4, at least 16");
    require(std::isfinite(motion_amplitude) && motion_amplitude >= 0, "motion amplitude must be non-negative");
}

SyntheticSceneSpec SyntheticSceneSpec::from_json(const nlohmann::json& j) {
    require(j.is_object(), "scene spec must be a JSON object");
    SyntheticSceneSpec s;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "identity_seed") s.identity_seed = it->get<std::uint64_t>();
            else if (k == "motion_seed") s.motion_seed = it->get<std::uint64_t>();
            else if (k == "background_seed") s.background_seed = it->get<std::uint64_t>();
            else if (k == "camera") s.camera = parse_camera_path(it->get<std::string>());
            else if (k == "frames") s.frames = it->get<int>();
            else if (k == "size") s.size = it->get<int>();
            else if (k == "motion_amplitude") s.motion_amplitude = it->get<double>();
            else if (k == "plate_shift") s.plate_shift = it->get<int>();
            else if (k == "texture_size") s.texture_size = it->get<int>();
            else reject("unknown key '" + k + "' in scene spec");
        }
    } catch (const nlohmann::json::exception& e) {
        reject(std::string("bad scene spec: ") + e.what());
    }
    s.validate();
    return s;
}

nlohmann::ordered_json SyntheticSceneSpec::to_json() const {
    return {{"identity_seed", identity_seed}, {"motion_seed", motion_seed},
            {"background_seed", background_seed}, {"camera", to_string(camera)},
            {"frames", frames}, {"size", size},
            {"motion_amplitude", motion_amplitude}, {"plate_shift", plate_shift},
            {"texture_size", texture_size}};
}

body::Intrinsics synthetic_intrinsics(int size) { return {size * 1.25, size * 1.25, size / 2.0, size / 2.0}; }

body::RenderOptions synthetic_render_options(int size) {
    body::RenderOptions o;
    o.height = o.width = size;
    return o;
}

namespace {

double q8(double v) { return quantize8(std::clamp(v, 0.0, 1.0)); }

Vec3 random_color(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    return Vec3(u(rng), u(rng), u(rng));
}

}  // namespace

Image synthetic_texture(std::uint64_t identity_seed, int size) {
    std::mt19937_64 rng(identity_seed * 7919 + 17);
    const Vec3 skin = random_color(rng, 0.45, 0.9);
    const Vec3 shirt = random_color(rng, 0.1, 0.95);
    const Vec3 stripe = random_color(rng, 0.1, 0.95);
    const Vec3 pants = random_color(rng, 0.05, 0.6);
    const Vec3 hair = random_color(rng, 0.0, 0.35);
    std::uniform_int_distribution<int> period_d(3, 6);
    const int period = period_d(rng);
    // Parts: 0 pelvis, 1 torso, 2 head, 3-4 arms, 5-6 legs, 7 nose.
    Image tex(size, size, 3);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double u = (c + 0.5) / size, v = (r + 0.5) / size;
            const int part = static_cast<int>(u * 4) + 4 * static_cast<int>(v * 2);
            const double fv = std::fmod(v, 0.5) / 0.5;  // position within the part cell
            Vec3 col;
            switch (part) {
                case 1:
                    col = (r / period) % 2 ? stripe : shirt;
                    break;
                case 3:
                case 4:
                    col = fv < 0.25 ? skin : shirt;
                    break;
                case 2:
                    col = fv > 0.75 ? hair : skin;
                    break;
                case 7:
                    col = skin * 0.8;
                    break;
                default:
                    col = pants;
            }
            col *= 0.85 + 0.15 * fv;
            for (int ch = 0; ch < 3; ++ch) tex.at(r, c, ch) = q8(col[ch]);
        }
    return tex;
}

Image synthetic_plate(std::uint64_t background_seed, int size, int shift) {
    std::mt19937_64 rng(background_seed * 104729 + 5);
    const Vec3 a = random_color(rng, 0.1, 0.9), b = random_color(rng, 0.1, 0.9);
    std::uniform_real_distribution<double> ang(0.0, 2 * std::numbers::pi);
    const double theta = ang(rng);
    std::uniform_int_distribution<int> cell_d(12, 24);
    const int cell = cell_d(rng);
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int xs = x + shift;
            const double g = 0.5 + 0.5 * std::sin((std::cos(theta) * xs + std::sin(theta) * y) / size * 2.5);
            const bool dark = ((xs >= 0 ? xs / cell : (xs - cell + 1) / cell) + y / cell) % 2 != 0;
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = q8((a[ch] * (1 - g) + b[ch] * g) * (dark ? 0.8 : 1.0));
        }
    return img;
}

std::vector<body::BodyModelState> synthetic_motion(std::uint64_t motion_seed, int frames, double amplitude,
                                                   int joint_count) {
    std::mt19937_64 rng(motion_seed * 31337 + 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // Main swing axis per joint: pelvis and head turn about y, limbs swing about x.
    const Vec3 axes[7] = {Vec3(0, 1, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 0, 0.3),
                          Vec3(1, 0, -0.3), Vec3(1, 0, 0), Vec3(1, 0, 0)};
    const double scales[7] = {0.3, 0.2, 0.5, 1.0, 1.0, 0.6, 0.6};
    std::vector<double> amp(static_cast<std::size_t>(joint_count)), phase(amp.size());
    for (int j = 0; j < joint_count; ++j) {
        amp[static_cast<std::size_t>(j)] = amplitude * (j < 7 ? scales[j] : 0.5) * (0.5 + u(rng));
        phase[static_cast<std::size_t>(j)] = 2 * std::numbers::pi * u(rng);
    }
    const int period = std::max(frames, 2);
    std::vector<body::BodyModelState> out;
    for (int f = 0; f < frames; ++f) {
        body::BodyModelState s = body::rest_state(joint_count, f);
        for (int j = 0; j < joint_count; ++j) {
            const double a = amp[static_cast<std::size_t>(j)] *
                             std::sin(2 * std::numbers::pi * f / period + phase[static_cast<std::size_t>(j)]);
            const Vec3 axis = (j < 7 ? axes[j] : Vec3(1, 0, 0)).normalized() * a;
            for (int k = 0; k < 3; ++k) s.theta[static_cast<std::size_t>(3 * j + k)] = amplitude == 0 ? 0.0 : axis[k];
        }
        out.push_back(s);
    }
    return out;
}

std::vector<body::CameraPose> synthetic_cameras(CameraPath path, int frames, int size) {
    const body::Intrinsics k = synthetic_intrinsics(size);
    constexpr double radius = 3.2, height = 0.2;
    std::vector<body::CameraPose> out;
    for (int f = 0; f < frames; ++f) {
        switch (path) {
            case CameraPath::orbit:
                out.push_back(body::orbit_camera(f, frames, radius, height, k));
                break;
            case CameraPath::pan: {
                const double x = frames > 1 ? -0.4 + 0.8 * f / (frames - 1) : 0.0;
                out.push_back(body::look_at(Vec3(x, height, radius), Vec3(x, 0, 0), Vec3(0, 1, 0), k));
                break;
            }
            case CameraPath::fixed:
                out.push_back(body::look_at(Vec3(0, height, radius), Vec3(0, 0, 0), Vec3(0, 1, 0), k));
        }
    }
    return out;
}

Image composite(const Image& foreground, const Image& plate, const Image& mask) {
    require(foreground.same_dims(plate) && mask.channels == 1 && mask.height == plate.height &&
                mask.width == plate.width,
            "composite inputs differ in size");
    Image out = plate;
    for (int y = 0; y < plate.height; ++y)
        for (int x = 0; x < plate.width; ++x) {
            const double m = mask.at(y, x, 0);
            for (int c = 0; c < plate.channels; ++c)
                out.at(y, x, c) = foreground.at(y, x, c) * m + plate.at(y, x, c) * (1.0 - m);
        }
    return out;
}

ClipRecord generate_synthetic_clip(const SyntheticSceneSpec& spec) {
    spec.validate();
    const body::BodyMesh mesh = body::make_humanoid();
    const body::UVTextureMap truth = body::UVTextureMap::from_image(synthetic_texture(spec.identity_seed, spec.texture_size));
    const auto opts = synthetic_render_options(spec.size);

    ClipRecord rec;
    rec.identity_id = "id" + std::to_string(spec.identity_seed);
    rec.clip_id = rec.identity_id + "_m" + std::to_string(spec.motion_seed) + "_b" +
                  std::to_string(spec.background_seed) + "_" + to_string(spec.camera);
    rec.states = synthetic_motion(spec.motion_seed, spec.frames, spec.motion_amplitude, mesh.joint_count());
    rec.cameras = synthetic_cameras(spec.camera, spec.frames, spec.size);

    body::SurfaceCorrespondence first;
    for (int f = 0; f < spec.frames; ++f) {
        const body::RenderResult r =
            body::rasterize(body::pose_mesh(mesh, rec.states[static_cast<std::size_t>(f)]), truth,
                            rec.cameras[static_cast<std::size_t>(f)], opts);
        Image mask(spec.size, spec.size, 1);
        for (std::size_t i = 0; i < r.map.coverage.size(); ++i) mask.data[i] = r.map.coverage[i] ? 1.0 : 0.0;
        Image plate = synthetic_plate(spec.background_seed, spec.size, f * spec.plate_shift);
        rec.frames.push_back(composite(r.map.pixels, plate, mask));
        rec.masks.push_back(std::move(mask));
        rec.plates.push_back(std::move(plate));
        if (f == 0) first = r.correspondence;
    }

    // Completed texture from what frame 0 shows, then the control sequence.
    const body::UVTextureMap partial =
        body::extract_partial_texture(rec.frames[0], first, spec.texture_size, spec.texture_size);
    const body::UVTextureMap completed = body::complete_texture(partial, body::NearestValidFill{});
    rec.texture = completed.texels;
    for (auto& pm : body::render_sequence(mesh, completed, rec.states, rec.cameras, opts))
        rec.pose_maps.push_back(std::move(pm.pixels));
    rec.validate();
    return rec;
}

}  // namespace cfs::data
