#include "cfsynth/cli.hpp"

#include "cfsynth/dataio.hpp"
#include "cfsynth/error.hpp"
#include "cfsynth/log.hpp"
#include "cfsynth/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

namespace cfs::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

int exit_code(const std::exception& e) {
    if (dynamic_cast<const InvalidInput*>(&e)) return kInvalid;
    if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->is_validation() ? kInvalid : kFailure;
    return kFailure;
}

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        reject(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

std::string numbered(const char* kind, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.png", kind, i);
    return buf;
}

// frame_*.png when present, otherwise every PNG; sorted by name.
std::vector<fs::path> frame_files(const fs::path& dir) {
    require(fs::is_directory(dir), "directory " + dir.string() + " not found");
    std::vector<fs::path> frames, all;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".png") continue;
        all.push_back(e.path());
        if (e.path().filename().string().rfind("frame_", 0) == 0) frames.push_back(e.path());
    }
    auto& picked = frames.empty() ? all : frames;
    std::sort(picked.begin(), picked.end());
    return picked;
}

std::vector<fs::path> manifest_paths(const json& data, const fs::path& base) {
    require(data.is_object(), "train config needs a 'data' object");
    std::vector<fs::path> out;
    for (auto it = data.begin(); it != data.end(); ++it) {
        if (it.key() == "manifests") {
            for (const auto& m : *it) out.push_back(resolve(base, m.get<std::string>()));
        } else if (it.key() == "dir") {
            const fs::path dir = resolve(base, it->get<std::string>());
            require(fs::is_directory(dir), "data directory " + dir.string() + " not found");
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(dir))
                if (fs::exists(e.path() / "manifest.json")) found.push_back(e.path() / "manifest.json");
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else {
            reject("unknown key '" + it.key() + "' in data config");
        }
    }
    require(!out.empty(), "train config lists no clips");
    return out;
}

codec::CodecTrainConfig codec_config(const json& j, std::uint64_t seed) {
    codec::CodecTrainConfig c;
    c.seed = seed;
    require(j.is_object(), "codec training config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "steps") c.steps = it->get<int>();
        else if (k == "lr") c.lr = it->get<double>();
        else if (k == "batch") c.batch = it->get<int>();
        else if (k == "seed") c.seed = it->get<std::uint64_t>();
        else reject("unknown key '" + k + "' in codec training config");
    }
    return c;
}

}  // namespace

int cmd_gen_data(const fs::path& spec_file, const fs::path& out_dir, std::uint64_t seed) {
    const json spec = read_json(spec_file);
    require(spec.is_object() && spec.contains("clips") && spec.at("clips").is_array(),
            spec_file.string() + ": expected {\"clips\": [...]}");
    for (auto it = spec.begin(); it != spec.end(); ++it)
        require(it.key() == "clips", spec_file.string() + ": unknown key '" + it.key() + "'");
    const json& clips = spec.at("clips");
    require(!clips.empty(), spec_file.string() + ": no clips");

    std::vector<data::SyntheticSceneSpec> scenes;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        try {
            auto s = data::SyntheticSceneSpec::from_json(clips[i]);
            s.identity_seed += seed;
            s.motion_seed += seed;
            s.background_seed += seed;
            scenes.push_back(s);
        } catch (const InvalidInput& e) {
            reject("clip " + std::to_string(i) + ": " + e.what());
        }
    }
    fs::create_directories(out_dir);
    std::set<std::string> ids;
    for (const auto& s : scenes) {
        const auto clip = data::generate_synthetic_clip(s);
        require(ids.insert(clip.clip_id).second, "two clips share the id " + clip.clip_id);
        const fs::path dir = out_dir / clip.clip_id;
        data::write_clip(clip, dir, json{{"seed", seed}, {"spec", s.to_json()}});
        pipeline::write_clip_job(clip, dir, json{{"seed", seed}});
        log::info("wrote " + (dir / "manifest.json").string());
    }
    return static_cast<int>(scenes.size());
}

fs::path cmd_train(const fs::path& config_file, const TrainOverrides& overrides) {
    const json cfg = read_json(config_file);
    require(cfg.is_object(), "train config must be a JSON object");
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        static const std::set<std::string> known{"model", "train", "codec", "data", "init_checkpoint", "out_dir"};
        require(known.count(it.key()) == 1, "unknown key '" + it.key() + "' in " + config_file.string());
    }
    const fs::path base = config_file.parent_path();
    auto tc = pipeline::TrainConfig::from_json(cfg.value("train", json::object()));
    if (overrides.seed) tc.seed = *overrides.seed;
    if (overrides.out_dir) tc.out_dir = *overrides.out_dir;
    else if (cfg.contains("out_dir")) tc.out_dir = resolve(base, cfg.at("out_dir").get<std::string>());
    require(!tc.out_dir.empty(), "no output directory: pass --out or set out_dir");

    std::vector<data::ClipRecord> clips;
    for (const auto& m : manifest_paths(cfg.value("data", json()), overrides.data_root.value_or(base)))
        clips.push_back(data::load_clip(m));
    log::info("loaded " + std::to_string(clips.size()) + " clips");

    std::unique_ptr<pipeline::Model> model;
    if (cfg.contains("init_checkpoint")) {
        const fs::path ck = resolve(base, cfg.at("init_checkpoint").get<std::string>());
        require(fs::exists(ck), "init checkpoint " + ck.string() + " not found");
        model = pipeline::Model::load(ck);
        if (cfg.contains("model"))
            require(pipeline::ModelConfig::from_json(cfg.at("model")).hash() == model->config.hash(),
                    "model config differs from the one stored in " + ck.string());
    } else {
        require(tc.phase != 2,
                "phase 2 trains only the temporal layers and must start from a phase-1 checkpoint; set "
                "init_checkpoint");
        model = std::make_unique<pipeline::Model>(pipeline::ModelConfig::from_json(cfg.value("model", json::object())));
        auto cc = codec_config(cfg.value("codec", json::object()), tc.seed);
        cc.log_path = tc.out_dir / "codec_log.jsonl";
        const auto losses = pipeline::train_codec_on_clips(*model, clips, cc);
        if (!losses.empty()) log::info("codec trained, final loss " + std::to_string(losses.back()));
    }
    const auto result = pipeline::train(*model, clips, tc);
    log::info("phase " + std::to_string(tc.phase) + " done after " + std::to_string(tc.steps) + " steps");
    return result.checkpoint;
}

void cmd_render_pose(const fs::path& job_file, const fs::path& out_dir) {
    const auto job = pipeline::load_job(job_file);
    const int size = job.reference.height;
    require(size > 0 && job.reference.width == size, "reference image must be square");
    require(job.backgrounds.size() == job.states.size(),
            "job has " + std::to_string(job.states.size()) + " body states but " +
                std::to_string(job.backgrounds.size()) + " background frames");
    const auto maps = body::render_sequence(job.mesh, body::UVTextureMap::from_image(job.texture), job.states,
                                            job.cameras, data::synthetic_render_options(size));
    fs::create_directories(out_dir);
    ordered_json frames = ordered_json::array();
    for (std::size_t f = 0; f < maps.size(); ++f) {
        const std::string pose = numbered("pose", f), preview = numbered("preview", f);
        write_png(out_dir / pose, maps[f].pixels);
        write_png(out_dir / preview, pipeline::composite_preview(maps[f], job.backgrounds[f]));
        frames.push_back({{"pose_map", pose}, {"preview", preview}});
    }
    write_json(out_dir / "manifest.json", {{"frames", frames}, {"seed", job.seed}, {"size", size}});
}

void cmd_synthesize(const fs::path& job_file, const fs::path& checkpoint, const fs::path& out_dir,
                    std::optional<std::uint64_t> seed) {
    require(fs::exists(checkpoint), "checkpoint " + checkpoint.string() + " not found");
    auto job = pipeline::load_job(job_file);
    if (seed) job.seed = *seed;
    const auto model = pipeline::Model::load(checkpoint);
    const auto result = pipeline::synthesize(*model, job);
    pipeline::write_synthesis(out_dir, result, job, *model);
}

eval::MetricReport cmd_evaluate(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& report_path) {
    const auto pred_files = frame_files(pred_dir), gt_files = frame_files(gt_dir);
    require(!gt_files.empty(), "no frames in " + gt_dir.string());
    require(pred_files.size() == gt_files.size(), std::to_string(pred_files.size()) + " predicted frames but " +
                                                      std::to_string(gt_files.size()) + " ground-truth frames");
    std::vector<Image> pred, gt;
    for (const auto& p : pred_files) pred.push_back(read_png(p));
    for (const auto& p : gt_files) gt.push_back(read_png(p));
    const eval::RandomProjectionEmbedder embedder;
    fs::path name = gt_dir.lexically_normal();
    if (name.filename().empty()) name = name.parent_path();
    const auto report = eval::evaluate_clip(pred, gt, name.filename().string(),
                                            gt.size() >= 2 ? &embedder : nullptr);
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    eval::write_report(report_path, report);
    return report;
}

}  // namespace cfs::cli
