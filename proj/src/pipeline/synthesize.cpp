#include "cfsynth/pipeline.hpp"

#include "cfsynth/error.hpp"
#include "cfsynth/log.hpp"

#include <algorithm>
#include <fstream>

namespace cfs::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tensor;

void InferenceJob::validate(int image_size) const {
    const int N = frames();
    require(N >= 1, "job has no body states");
    require(cameras.size() == states.size(), "job has " + std::to_string(N) + " body states but " +
                                                 std::to_string(cameras.size()) + " cameras");
    require(backgrounds.size() == states.size(), "job has " + std::to_string(N) + " body states but " +
                                                     std::to_string(backgrounds.size()) + " background frames");
    require(window >= 1 && stride >= 1 && stride <= window, "need 1 <= stride <= window");
    require(sampler_steps >= 0, "sampler step count must be non-negative");
    require(reference.channels == 3 && reference.height == image_size && reference.width == image_size,
            "reference image must be RGB at " + std::to_string(image_size) + " px");
    require(reference_mask.channels == 1 && reference_mask.height == image_size && reference_mask.width == image_size,
            "reference mask must be single-channel at " + std::to_string(image_size) + " px");
    for (double v : reference_mask.data) require(v == 0.0 || v == 1.0, "reference mask is not binary");
    require(texture.channels == 3 && !texture.empty(), "texture must be an RGB image");
    for (std::size_t i = 0; i < backgrounds.size(); ++i)
        require(backgrounds[i].channels == 3 && backgrounds[i].height == image_size &&
                    backgrounds[i].width == image_size,
                "background frame " + std::to_string(i) + " must be RGB at " + std::to_string(image_size) + " px");
}

InferenceJob load_job(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open job file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        reject(path.string() + ": " + e.what());
    }
    const auto dir = path.parent_path();
    InferenceJob job;
    try {
        auto file = [&](const char* key) { return dir / j.at(key).get<std::string>(); };
        job.reference = read_png(file("reference"));
        job.reference_mask = read_png(file("mask"));
        job.texture = read_png(file("texture"));
        job.states = body::load_states(file("states"));
        job.cameras = body::load_trajectory(file("trajectory"));
        if (j.contains("mesh")) job.mesh = body::load_mesh(file("mesh"));
        const auto bg_dir = file("background_dir");
        require(std::filesystem::is_directory(bg_dir), "background directory " + bg_dir.string() + " not found");
        std::vector<std::filesystem::path> pngs;
        for (const auto& e : std::filesystem::directory_iterator(bg_dir))
            if (e.path().extension() == ".png") pngs.push_back(e.path());
        std::sort(pngs.begin(), pngs.end());
        for (const auto& p : pngs) job.backgrounds.push_back(read_png(p));
        job.window = j.value("window", job.window);
        job.stride = j.value("stride", std::max(1, job.window / 2));
        job.seed = j.value("seed", job.seed);
        job.sampler_steps = j.value("steps", job.sampler_steps);
        job.eta = j.value("eta", job.eta);
    } catch (const json::exception& e) {
        reject(path.string() + ": " + e.what());
    }
    return job;
}

std::filesystem::path write_clip_job(const data::ClipRecord& clip, const std::filesystem::path& clip_dir,
                                     const json& settings) {
    clip.validate();
    require(settings.is_object(), "job settings must be a JSON object");
    require(std::filesystem::exists(clip_dir / "manifest.json"), "no clip written in " + clip_dir.string());
    body::save_states(clip_dir / "states.json", clip.states);
    body::save_trajectory(clip_dir / "trajectory.json", clip.cameras);
    ordered_json j{{"reference", "frame_0000.png"}, {"mask", "mask_0000.png"},   {"texture", "texture.png"},
                   {"states", "states.json"},       {"trajectory", "trajectory.json"}, {"background_dir", "plates"}};
    for (auto it = settings.begin(); it != settings.end(); ++it) {
        const std::string& k = it.key();
        require(k == "window" || k == "stride" || k == "seed" || k == "steps" || k == "eta",
                "unknown job setting '" + k + "'");
        j[k] = *it;
    }
    const auto path = clip_dir / "job.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
    return path;
}

std::vector<int> window_starts(int frames, int window, int stride) {
    require(frames >= 1 && window >= 1 && stride >= 1, "frames, window and stride must be positive");
    const int F = std::min(window, frames);
    std::vector<int> s;
    for (int k = 0; k * stride + F <= frames; ++k) s.push_back(k * stride);
    if (s.back() + F < frames) s.push_back(frames - F);
    return s;
}

Tensor aggregate_windows(const std::vector<Tensor>& outputs, const std::vector<int>& starts, int frames) {
    require(!outputs.empty() && outputs.size() == starts.size(), "need one start per window output");
    require(frames >= 1, "frame count must be positive");
    const nn::Shape& s0 = outputs[0].shape();
    require(s0.size() == 4, "window outputs must be [F,h,w,c]");
    const std::size_t per = outputs[0].size() / static_cast<std::size_t>(s0[0]);
    std::vector<double> acc(per * static_cast<std::size_t>(frames), 0.0);
    std::vector<int> cover(static_cast<std::size_t>(frames), 0);
    for (std::size_t w = 0; w < outputs.size(); ++w) {
        const Tensor& o = outputs[w];
        require(o.shape().size() == 4 && o.dim(1) == s0[1] && o.dim(2) == s0[2] && o.dim(3) == s0[3],
                "window outputs differ in latent shape");
        require(starts[w] >= 0 && starts[w] + o.dim(0) <= frames, "window " + std::to_string(w) + " runs past frame " +
                                                                      std::to_string(frames - 1));
        for (int f = 0; f < o.dim(0); ++f) {
            const std::size_t g = static_cast<std::size_t>(starts[w] + f);
            ++cover[g];
            for (std::size_t i = 0; i < per; ++i) acc[g * per + i] += o.values()[static_cast<std::size_t>(f) * per + i];
        }
    }
    for (int f = 0; f < frames; ++f) {
        const int c = cover[static_cast<std::size_t>(f)];
        require(c > 0, "frame " + std::to_string(f) + " is not covered by any window");
        for (std::size_t i = 0; i < per; ++i) acc[static_cast<std::size_t>(f) * per + i] /= c;
    }
    return Tensor::from({frames, s0[1], s0[2], s0[3]}, std::move(acc));
}

Tensor aggregate_windows(const std::vector<Tensor>& outputs, int frames, int window, int stride) {
    return aggregate_windows(outputs, window_starts(frames, window, stride), frames);
}

Image composite_preview(const body::PoseMap& pose_map, const Image& background) {
    require(pose_map.pixels.same_dims(background) &&
                pose_map.coverage.size() == static_cast<std::size_t>(background.height) * background.width,
            "pose map and background differ in size");
    Image out = background;
    for (int y = 0; y < background.height; ++y)
        for (int x = 0; x < background.width; ++x)
            if (pose_map.coverage[static_cast<std::size_t>(y) * background.width + x])
                for (int c = 0; c < background.channels; ++c) out.at(y, x, c) = pose_map.pixels.at(y, x, c);
    return out;
}

namespace {

template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const InvalidInput& e) {
        throw StageError(name, e.what(), true);
    } catch (const std::exception& e) {
        throw StageError(name, e.what(), false);
    }
}

Tensor frame_noise(std::uint64_t seed, int frames, const nn::Shape& latent) {
    std::vector<double> v;
    const std::size_t per = nn::numel(latent);
    for (int f = 0; f < frames; ++f) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(f)};
        std::mt19937_64 rng(seq);
        std::normal_distribution<double> n(0.0, 1.0);
        for (std::size_t i = 0; i < per; ++i) v.push_back(n(rng));
    }
    nn::Shape s{frames};
    s.insert(s.end(), latent.begin(), latent.end());
    return Tensor::from(s, std::move(v));
}

cond::ConditioningBundle window_bundle(const cond::ConditioningBundle& full, int start, int len) {
    cond::ConditioningBundle b = full;
    b.pose = nn::slice0(full.pose, start, start + len);
    for (auto& l : b.bg.levels) l = nn::slice0(l, start, start + len);
    return b;
}

}  // namespace

cond::ConditioningBundle condition(const Model& model, const std::vector<Image>& pose_maps,
                                   const Image& reference, const Image& reference_mask,
                                   const std::vector<Image>& backgrounds) {
    require(!pose_maps.empty() && pose_maps.size() == backgrounds.size(),
            "need one background frame per pose map");
    cond::ConditioningBundle b;
    b.pose = model.pose(codec::to_tensor(pose_maps));
    const Image fg = cond::apply_image_mask(reference, reference_mask);
    b.fg = cond::apply_mask(cond::encode_foreground(fg, reference_mask, model.codec, model.reference));
    b.identity = cond::embed_identity(fg, model.identity);
    b.bg = cond::encode_background(backgrounds, model.codec, model.background);
    b.lambda = model.config.lambda;
    return b;
}

SynthesisResult synthesize(const Model& model, const InferenceJob& job) {
    nn::NoGradGuard guard;
    const int size = model.config.image_size;
    stage("validate", [&] {
        job.validate(size);
        require(model.codec.frozen(), "model codec is not trained");
        require(model.phase >= 0, "model has not been trained");
        return 0;
    });
    SynthesisResult res;
    const int N = job.frames();

    res.pose_maps = stage("render_pose", [&] {
        const auto tex = body::UVTextureMap::from_image(job.texture);
        return body::render_sequence(job.mesh, tex, job.states, job.cameras, data::synthetic_render_options(size));
    });

    const cond::ConditioningBundle full = stage("conditioning", [&] {
        std::vector<Image> maps;
        for (const auto& pm : res.pose_maps) maps.push_back(pm.pixels);
        return condition(model, maps, job.reference, job.reference_mask, job.backgrounds);
    });

    const Tensor z0 = stage("sampling", [&] {
        const int h = size / model.config.codec.scale_factor;
        const Tensor zT = frame_noise(job.seed, N, {h, h, model.config.codec.latent_channels});
        res.window_starts = window_starts(N, job.window, job.stride);
        const int F = std::min(job.window, N);
        const bool temporal = model.phase >= 2;
        diffusion::NoisePredictor predict = [&](const Tensor& z, int t) {
            std::vector<Tensor> outs;
            for (int s : res.window_starts)
                outs.push_back(model.denoiser.predict(nn::slice0(z, s, s + F), {t}, window_bundle(full, s, F), temporal));
            return aggregate_windows(outs, res.window_starts, N);
        };
        return diffusion::ddim_sample(zT, predict, model.schedule, {job.sampler_steps, job.eta, job.seed});
    });

    res.frames = stage("decode", [&] {
        std::vector<Image> frames;
        for (int f = 0; f < N; ++f) {
            Image im = codec::to_images(model.codec.decode_tensor(nn::slice0(z0, f, f + 1)))[0];
            frames.push_back(quantize8(im));
        }
        return frames;
    });
    return res;
}

void write_synthesis(const std::filesystem::path& dir, const SynthesisResult& result, const InferenceJob& job,
                     const Model& model) {
    std::filesystem::create_directories(dir);
    ordered_json files = ordered_json::array();
    for (std::size_t f = 0; f < result.frames.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", f);
        write_png(dir / name, result.frames[f]);
        files.push_back(name);
    }
    const ordered_json m{{"frames", result.frames.size()},
                         {"seed", job.seed},
                         {"config_hash", model.config.hash()},
                         {"phase", model.phase},
                         {"window", job.window},
                         {"stride", job.stride},
                         {"window_starts", result.window_starts},
                         {"sampler_steps", job.sampler_steps},
                         {"eta", job.eta},
                         {"files", files}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    out << m.dump(1) << '\n';
}

}  // namespace cfs::pipeline
