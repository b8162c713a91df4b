#include <doctest.h>

#include "cfsynth/cli.hpp"
#include "cfsynth/dataio.hpp"
#include "cfsynth/error.hpp"
#include "cfsynth/pipeline.hpp"

#include <json.hpp>

#include <fstream>
#include <iterator>
#include <sstream>

using namespace cfs;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cfsynth_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void put(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(1); }

std::string bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

struct Run {
    int code;
    std::string out, err;
};

Run invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

json scene(int id, int frames) {
    return {{"identity_seed", id}, {"motion_seed", id + 1}, {"background_seed", id + 2}, {"frames", frames},
            {"size", 32}};
}

json tiny_train(int phase, int steps) {
    return {{"model",
             {{"image_size", 32},
              {"timesteps", 50},
              {"codec", {{"width", 8}}},
              {"denoiser",
               {{"pose_channels", 8},
                {"channels", {16, 32, 32}},
                {"groups", 4},
                {"time_dim", 16},
                {"temb_dim", 32},
                {"identity_dim", 16}}}}},
            {"codec", {{"steps", 2}}},
            {"train", {{"phase", phase}, {"steps", steps}, {"window", 4}}},
            {"data", {{"dir", "data"}}}};
}

// Spec with `clips`, written and generated under dir/data.
std::vector<fs::path> gen(const fs::path& dir, const json& clips) {
    put(dir / "spec.json", json{{"clips", clips.is_array() ? clips : json::array({clips})}});
    const auto r = invoke({"gen-data", "--config", (dir / "spec.json").string(), "--out", (dir / "data").string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir / "data")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("gen-data writes one loadable clip per spec entry, byte-identical on rerun") {
    const auto dir = scratch("gen");
    const auto clips = gen(dir, {scene(1, 3), scene(7, 2)});
    REQUIRE(clips.size() == 2);
    for (const auto& c : clips) {
        CHECK(fs::exists(c / "manifest.json"));
        const auto rec = data::load_clip(c / "manifest.json");
        CHECK(rec.length() >= 2);
        const json m = json::parse(bytes(c / "manifest.json"));
        CHECK(m.at("generator").at("seed") == 0);
    }
    const auto first = bytes(clips[0] / "frame_0001.png");
    const auto r = invoke({"gen-data", "--config", (dir / "spec.json").string(), "--out", (dir / "again").string()});
    CHECK(r.code == 0);
    CHECK(r.out == "2\n");
    CHECK(bytes(dir / "again" / clips[0].filename() / "frame_0001.png") == first);
    CHECK(bytes(dir / "again" / clips[1].filename() / "manifest.json") == bytes(clips[1] / "manifest.json"));

    put(dir / "bad.json", {{"clips", {{{"frames", 0}}}}});
    const auto bad = invoke({"gen-data", "--config", (dir / "bad.json").string(), "--out", (dir / "x").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("clip 0") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("train writes a checkpoint and one log line per step; phase 2 needs a phase-1 start") {
    const auto dir = scratch("train");
    gen(dir, {scene(1, 4)});
    put(dir / "p0.json", tiny_train(0, 3));
    auto r = invoke({"train", "--config", (dir / "p0.json").string(), "--out", (dir / "run").string(), "--log-level",
                  "warn"});
    REQUIRE(r.code == 0);
    std::vector<fs::path> ckpts;
    for (const auto& e : fs::directory_iterator(dir / "run"))
        if (e.path().extension() == ".ckpt") ckpts.push_back(e.path());
    CHECK(ckpts.size() == 1);
    std::ifstream log(dir / "run" / "train_log.jsonl");
    int lines = 0;
    for (std::string s; std::getline(log, s);) ++lines;
    CHECK(lines == 3);

    put(dir / "p2.json", tiny_train(2, 1));
    r = invoke({"train", "--config", (dir / "p2.json").string(), "--out", (dir / "run2").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("phase-1 checkpoint") != std::string::npos);

    // A phase-0 checkpoint is not enough either.
    auto p2 = tiny_train(2, 1);
    p2.erase("codec");
    p2["init_checkpoint"] = "run/phase0_final.ckpt";
    put(dir / "p2b.json", p2);
    r = invoke({"train", "--config", (dir / "p2b.json").string(), "--out", (dir / "run3").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("phase-1 checkpoint") != std::string::npos);

    put(dir / "typo.json", json{{"trian", json::object()}});
    CHECK(invoke({"train", "--config", (dir / "typo.json").string(), "--out", (dir / "run4").string()}).code == 1);
    fs::remove_all(dir);
}

TEST_CASE("render-pose matches the library renderer and is byte-stable") {
    const auto dir = scratch("render");
    const auto clips = gen(dir, {scene(3, 3)});
    const auto job_file = clips[0] / "job.json";
    REQUIRE(invoke({"render-pose", "--config", job_file.string(), "--out", (dir / "a").string()}).code == 0);
    REQUIRE(invoke({"render-pose", "--config", job_file.string(), "--out", (dir / "b").string()}).code == 0);
    const auto job = pipeline::load_job(job_file);
    const auto maps = body::render_sequence(job.mesh, body::UVTextureMap::from_image(job.texture), job.states,
                                            job.cameras, data::synthetic_render_options(32));
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 6);
    for (int f = 0; f < 3; ++f) {
        const std::string pose = "pose_000" + std::to_string(f) + ".png";
        const std::string preview = "preview_000" + std::to_string(f) + ".png";
        CHECK(read_png(dir / "a" / pose) == maps[static_cast<std::size_t>(f)].pixels);
        CHECK(bytes(dir / "a" / pose) == bytes(dir / "b" / pose));
        CHECK(bytes(dir / "a" / preview) == bytes(dir / "b" / preview));
    }

    json bad = json::parse(bytes(job_file));
    body::save_trajectory(clips[0] / "short.json", {job.cameras[0]});
    bad["trajectory"] = "short.json";
    put(clips[0] / "bad_job.json", bad);
    CHECK(invoke({"render-pose", "--config", (clips[0] / "bad_job.json").string(), "--out", (dir / "c").string()})
              .code == 1);
    fs::remove_all(dir);
}

TEST_CASE("synthesize writes N frames with the checkpoint's config hash") {
    const auto dir = scratch("synth");
    const auto clips = gen(dir, {scene(5, 1)});
    auto cfg = tiny_train(0, 1);
    cfg["train"]["window"] = 1;
    put(dir / "p0.json", cfg);
    const auto tr = invoke({"train", "--config", (dir / "p0.json").string(), "--out", (dir / "run").string(),
                         "--log-level", "error"});
    INFO(tr.err);
    REQUIRE(tr.code == 0);
    const fs::path ckpt = dir / "run" / "phase0_final.ckpt";
    const auto job = (clips[0] / "job.json").string();
    REQUIRE(invoke({"synthesize", "--config", job, "--checkpoint", ckpt.string(), "--out", (dir / "s").string(),
                 "--seed", "4"})
                .code == 0);
    int frames = 0;
    for (const auto& e : fs::directory_iterator(dir / "s")) frames += e.path().extension() == ".png";
    CHECK(frames == 1);
    const Image f0 = read_png(dir / "s" / "frame_0000.png");
    CHECK(f0.height == 32);
    CHECK(f0.width == 32);
    CHECK(f0.channels == 3);
    const json m = json::parse(bytes(dir / "s" / "manifest.json"));
    CHECK(m.at("config_hash").get<std::string>() == pipeline::checkpoint_config_hash(ckpt));
    CHECK(m.at("seed") == 4);

    const auto missing = invoke({"synthesize", "--config", job, "--checkpoint", (dir / "none.ckpt").string(), "--out",
                              (dir / "t").string()});
    CHECK(missing.code != 0);
    CHECK(missing.err.find("none.ckpt") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("evaluate reports per-frame metrics and exact aggregate means") {
    const auto dir = scratch("eval");
    const auto clips = gen(dir, {scene(2, 3)});
    const auto gt = clips[0].string();
    auto r = invoke({"evaluate", "--pred", gt, "--gt", gt, "--report", (dir / "same.jsonl").string()});
    REQUIRE(r.code == 0);
    std::ifstream in(dir / "same.jsonl");
    std::vector<json> recs;
    for (std::string s; std::getline(in, s);) recs.push_back(json::parse(s));
    REQUIRE(recs.size() == 4);
    for (int f = 0; f < 3; ++f) {
        CHECK(recs[static_cast<std::size_t>(f)].at("l1") == 0.0);
        CHECK(recs[static_cast<std::size_t>(f)].at("psnr") == 100.0);
        CHECK(recs[static_cast<std::size_t>(f)].at("ssim").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
    }
    const json& sum = recs[3].at("summary");
    for (const char* k : {"clip_id", "frames", "l1", "psnr", "ssim", "lpips", "fid_vid", "fvd"})
        CHECK(sum.contains(k));

    // Predicted = plates: means equal the per-frame values averaged by hand.
    fs::create_directories(dir / "pred");
    for (int f = 0; f < 3; ++f)
        fs::copy_file(clips[0] / "plates" / ("plate_000" + std::to_string(f) + ".png"),
                      dir / "pred" / ("frame_000" + std::to_string(f) + ".png"));
    r = invoke({"evaluate", "--pred", (dir / "pred").string(), "--gt", gt, "--out", (dir / "rep").string()});
    REQUIRE(r.code == 0);
    std::ifstream in2(dir / "rep" / "report.jsonl");
    recs.clear();
    for (std::string s; std::getline(in2, s);) recs.push_back(json::parse(s));
    for (const char* k : {"l1", "psnr", "ssim"}) {
        double acc = 0;
        for (int f = 0; f < 3; ++f) acc += recs[static_cast<std::size_t>(f)].at(k).get<double>();
        CHECK(recs[3].at("summary").at(k).get<double>() == doctest::Approx(acc / 3).epsilon(1e-12));
    }

    fs::remove(dir / "pred" / "frame_0002.png");
    r = invoke({"evaluate", "--pred", (dir / "pred").string(), "--gt", gt, "--out", (dir / "rep2").string()});
    CHECK(r.code == 1);
    fs::remove_all(dir);
}

TEST_CASE("exit codes and help") {
    CHECK(invoke({"--help"}).code == 0);
    CHECK(invoke({"--help"}).out.find("CFSYNTH_DATA_ROOT") != std::string::npos);
    CHECK(invoke({}).code == 1);
    CHECK(invoke({"gen-data", "--seed", "notanumber"}).code == 1);
    CHECK(invoke({"gen-data", "--config", "/nonexistent/spec.json", "--out", "/tmp/x"}).code == 1);
    CHECK(invoke({"render-pose", "--config", "x.json"}).code == 1);  // no --out
    CHECK(cli::exit_code(InvalidInput("x")) == 1);
    CHECK(cli::exit_code(StageError("sampling", "x", true)) == 1);
    CHECK(cli::exit_code(StageError("sampling", "x", false)) == 2);
    CHECK(cli::exit_code(std::runtime_error("x")) == 2);
}
