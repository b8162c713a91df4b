#include "cfsynth/pipeline.hpp"

#include "cfsynth/error.hpp"
#include "cfsynth/log.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <tuple>

namespace cfs::pipeline {

using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tensor;

void TrainConfig::validate() const {
    phase_groups(phase);
    require(steps >= 0, "step count must be non-negative");
    require(batch_size >= 1, "batch size must be at least 1");
    require(lr > 0 && std::isfinite(lr), "learning rate must be positive");
    require(window >= 1, "window length must be at least 1");
    require(flip_probability >= 0 && flip_probability <= 1, "flip probability must be in [0, 1]");
    require(reference_frame >= 0, "reference frame must be non-negative");
    require(checkpoint_every >= 0, "checkpoint interval must be non-negative");
}

ordered_json TrainConfig::to_json() const {
    return {{"phase", phase},
            {"steps", steps},
            {"batch_size", batch_size},
            {"lr", lr},
            {"cosine_decay", cosine_decay},
            {"window", window},
            {"flip_probability", flip_probability},
            {"reference_frame", reference_frame},
            {"seed", seed},
            {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    require(j.is_object(), "train config must be a JSON object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "phase") c.phase = it->get<int>();
            else if (k == "steps") c.steps = it->get<int>();
            else if (k == "batch_size") c.batch_size = it->get<int>();
            else if (k == "lr") c.lr = it->get<double>();
            else if (k == "cosine_decay") c.cosine_decay = it->get<bool>();
            else if (k == "window") c.window = it->get<int>();
            else if (k == "flip_probability") c.flip_probability = it->get<double>();
            else if (k == "reference_frame") c.reference_frame = it->get<int>();
            else if (k == "seed") c.seed = it->get<std::uint64_t>();
            else if (k == "checkpoint_every") c.checkpoint_every = it->get<int>();
            else reject("unknown key '" + k + "' in train config");
        }
    } catch (const json::exception& e) {
        reject(std::string("bad train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<double> train_codec_on_clips(Model& model, const std::vector<data::ClipRecord>& clips,
                                         const codec::CodecTrainConfig& cfg) {
    require(!clips.empty(), "no clips to train the codec on");
    std::vector<Image> corpus;
    for (const auto& c : clips) {
        corpus.insert(corpus.end(), c.frames.begin(), c.frames.end());
        corpus.insert(corpus.end(), c.plates.begin(), c.plates.end());
    }
    return codec::train_codec(model.codec, corpus, cfg);
}

namespace {

// Frozen-codec latents of frames, plates and masked references, encoded
// once per (clip, frame, flip).
class LatentCache {
public:
    explicit LatentCache(const codec::LatentCodec& codec) : codec_(codec) {}

    const Tensor& get(int kind, int clip, int frame, bool flipped, const Image& img) {
        const auto key = std::make_tuple(kind, clip, frame, flipped);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        nn::NoGradGuard guard;
        return cache_.emplace(key, codec_.encode_tensor(codec::to_tensor({img}))).first->second;
    }

private:
    const codec::LatentCodec& codec_;
    std::map<std::tuple<int, int, int, bool>, Tensor> cache_;
};

Tensor stack(const std::vector<Tensor>& items) {
    std::vector<double> v;
    for (const auto& t : items) v.insert(v.end(), t.values().begin(), t.values().end());
    nn::Shape s = items[0].shape();
    s[0] = static_cast<int>(items.size());
    return Tensor::from(s, std::move(v));
}

struct Prepared {
    Tensor z0;
    cond::ConditioningBundle bundle;
};

Prepared prepare(const Model& model, LatentCache& cache, const data::Sample& s, int reference_frame) {
    const int F = static_cast<int>(s.frames.size());
    std::vector<Tensor> z, bg;
    for (int i = 0; i < F; ++i) {
        const int f = s.ref.start + i;
        z.push_back(cache.get(0, s.ref.clip, f, s.ref.flipped, s.frames[static_cast<std::size_t>(i)]));
        bg.push_back(cache.get(1, s.ref.clip, f, s.ref.flipped, s.plates[static_cast<std::size_t>(i)]));
    }
    Prepared p;
    p.z0 = stack(z);
    p.bundle.pose = model.pose(codec::to_tensor(s.pose_maps));
    const Tensor& ref = cache.get(2, s.ref.clip, reference_frame, s.ref.flipped, s.reference);
    p.bundle.fg = cond::apply_mask(cond::encode_foreground_latent(ref, s.reference_mask, model.reference));
    p.bundle.bg = cond::encode_background(stack(bg), model.background);
    p.bundle.identity = model.identity(codec::to_tensor({s.reference}));
    p.bundle.lambda = model.config.lambda;
    return p;
}

ordered_json checksum_json(const std::map<std::string, std::uint64_t>& sums) {
    ordered_json j = ordered_json::object();
    for (const auto& [g, v] : sums) j[g] = nn::hex64(v);
    return j;
}

std::map<std::string, std::uint64_t> all_checksums(const Model& model) {
    auto sums = model.store.checksums();
    sums["codec"] = model.codec.checksum();
    return sums;
}

}  // namespace

TrainResult train(Model& model, const std::vector<data::ClipRecord>& clips, const TrainConfig& cfg) {
    cfg.validate();
    require(!clips.empty(), "no training clips");
    for (const auto& c : clips) c.validate();
    require(model.codec.frozen(), "the codec must be trained and frozen before phase " + std::to_string(cfg.phase));
    if (cfg.phase == 2)
        require(model.phase >= 1, "phase 2 needs a phase-1 checkpoint (model has completed phase " +
                                      std::to_string(model.phase) + ")");
    for (const auto& c : clips)
        require(c.frames[0].height == model.config.image_size && c.frames[0].width == model.config.image_size,
                "clip '" + c.clip_id + "' frames are not " + std::to_string(model.config.image_size) + " px");

    const auto groups = phase_groups(cfg.phase);
    model.store.set_trainable(groups);
    nn::Adam opt(cfg.lr);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> pick_t(1, model.schedule.T);
    LatentCache cache(model.codec);
    data::BatchOptions bo;
    bo.window = cfg.window;
    bo.batch_size = cfg.batch_size;
    bo.flip_probability = cfg.flip_probability;
    bo.reference_frame = cfg.reference_frame;
    const bool temporal = cfg.phase == 2;

    std::ofstream log;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        log.open(cfg.out_dir / "train_log.jsonl");
        if (!log) throw std::runtime_error("cannot write " + (cfg.out_dir / "train_log.jsonl").string());
    }
    auto save = [&](const std::string& name) {
        const auto p = cfg.out_dir / name;
        model.save(p);
        return p;
    };

    TrainResult res;
    res.checksums_before = all_checksums(model);
    for (int step = 0; step < cfg.steps; ++step) {
        const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
        const double lr = cfg.cosine_decay ? cfg.lr * (0.1 + 0.9 * 0.5 * (1 + std::cos(std::numbers::pi * frac))) : cfg.lr;
        opt.set_lr(lr);
        model.store.zero_grad();
        double step_loss = 0;
        for (const data::Sample& s : data::make_batch(clips, bo, rng)) {
            const Prepared p = prepare(model, cache, s, cfg.reference_frame);
            const int F = p.z0.dim(0);
            std::vector<int> ts(temporal ? 1 : static_cast<std::size_t>(F));
            for (int& t : ts) t = pick_t(rng);
            std::vector<double> eps(p.z0.size());
            for (double& e : eps) e = normal(rng);
            const Tensor loss = nn::scale(
                diffusion::training_loss(model.denoiser, p.z0, Tensor::from(p.z0.shape(), std::move(eps)), ts,
                                         p.bundle, model.schedule, temporal),
                1.0 / cfg.batch_size);
            nn::backward(loss);
            step_loss += loss.item();
        }
        opt.step(model.store);
        ++model.step;
        res.losses.push_back(step_loss);
        if (log) {
            ordered_json rec{{"step", step + 1}, {"phase", cfg.phase}, {"loss", step_loss}, {"lr", lr}};
            rec["checksums"] = checksum_json(all_checksums(model));
            log << rec.dump() << '\n';
        }
        if (!std::isfinite(step_loss)) throw std::runtime_error("loss diverged at step " + std::to_string(step + 1));
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps &&
            !cfg.out_dir.empty()) {
            char name[48];
            std::snprintf(name, sizeof name, "phase%d_step%06d.ckpt", cfg.phase, step + 1);
            save(name);
        }
        if ((step + 1) % 100 == 0)
            log::info("phase " + std::to_string(cfg.phase) + " step " + std::to_string(step + 1) + " loss " +
                      std::to_string(step_loss));
    }
    model.store.set_trainable({});
    model.phase = std::max(model.phase, cfg.phase);
    res.checksums_after = all_checksums(model);
    if (!cfg.out_dir.empty()) res.checkpoint = save("phase" + std::to_string(cfg.phase) + "_final.ckpt");
    return res;
}

double evaluation_loss(const Model& model, const std::vector<data::ClipRecord>& clips, int window, int grid,
                       std::uint64_t seed) {
    require(grid >= 1, "evaluation grid needs at least one timestep");
    require(!clips.empty(), "no clips to evaluate");
    nn::NoGradGuard guard;
    LatentCache cache(model.codec);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool temporal = model.phase >= 2;
    double total = 0;
    int count = 0;
    for (std::size_t c = 0; c < clips.size(); ++c) {
        const int F = std::min(window, clips[c].length());
        const data::Sample s = data::materialize(clips, {static_cast<int>(c), 0, false}, F, 0);
        const Prepared p = prepare(model, cache, s, 0);
        for (int k = 0; k < grid; ++k) {
            const int t = std::clamp(static_cast<int>(std::lround((k + 0.5) * model.schedule.T / grid)), 1,
                                     model.schedule.T);
            std::vector<double> eps(p.z0.size());
            for (double& e : eps) e = normal(rng);
            total += diffusion::training_loss(model.denoiser, p.z0, Tensor::from(p.z0.shape(), std::move(eps)), {t},
                                              p.bundle, model.schedule, temporal)
                         .item();
            ++count;
        }
    }
    return total / count;
}

}  // namespace cfs::pipeline
