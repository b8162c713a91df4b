#include "cfsynth/dataio.hpp"

#include "cfsynth/error.hpp"

#include <json.hpp>

#include <fstream>

namespace cfs::data {

using nlohmann::json;

void ClipRecord::validate() const {
    const std::size_t n = frames.size();
    require(n > 0, "clip '" + clip_id + "' has no frames");
    require(masks.size() == n && plates.size() == n && pose_maps.size() == n && states.size() == n &&
                cameras.size() == n,
            "clip '" + clip_id + "': frames, masks, plates, pose maps, states and cameras differ in count");
    const Image& f0 = frames[0];
    require(f0.channels == 3, "clip '" + clip_id + "': frames must be RGB");
    for (std::size_t f = 0; f < n; ++f) {
        const std::string at = "clip '" + clip_id + "' frame " + std::to_string(f);
        require(frames[f].same_dims(f0) && plates[f].same_dims(f0) && pose_maps[f].same_dims(f0),
                at + ": image size mismatch");
        require(masks[f].channels == 1 && masks[f].height == f0.height && masks[f].width == f0.width,
                at + ": mask must be single-channel and frame-sized");
        for (double v : masks[f].data) require(v == 0.0 || v == 1.0, at + ": mask is not binary");
        cameras[f].validate();
    }
}

bool ClipRecord::same_content(const ClipRecord& o) const {
    if (clip_id != o.clip_id || identity_id != o.identity_id || frames != o.frames || masks != o.masks ||
        plates != o.plates || pose_maps != o.pose_maps || texture != o.texture || states.size() != o.states.size() ||
        cameras.size() != o.cameras.size())
        return false;
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].theta != o.states[i].theta || states[i].frame_index != o.states[i].frame_index) return false;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        const auto &a = cameras[i], &b = o.cameras[i];
        if (a.rotation != b.rotation || a.translation != b.translation || a.intrinsics.fx != b.intrinsics.fx ||
            a.intrinsics.fy != b.intrinsics.fy || a.intrinsics.cx != b.intrinsics.cx ||
            a.intrinsics.cy != b.intrinsics.cy)
            return false;
    }
    return true;
}

namespace {

json camera_json(const body::CameraPose& c) {
    json r = json::array();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.push_back(c.rotation(i, j));
    return {{"rotation", r},
            {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
            {"intrinsics", {c.intrinsics.fx, c.intrinsics.fy, c.intrinsics.cx, c.intrinsics.cy}}};
}

body::CameraPose camera_from(const json& j) {
    body::CameraPose c;
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    const auto k = j.at("intrinsics").get<std::vector<double>>();
    require(r.size() == 9 && t.size() == 3 && k.size() == 4, "camera record has wrong arity");
    for (int i = 0; i < 3; ++i)
        for (int m = 0; m < 3; ++m) c.rotation(i, m) = r[static_cast<std::size_t>(3 * i + m)];
    c.translation = body::Vec3(t[0], t[1], t[2]);
    c.intrinsics = {k[0], k[1], k[2], k[3]};
    return c;
}

std::string frame_name(const char* kind, std::size_t f) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu.png", kind, f);
    return buf;
}

}  // namespace

std::filesystem::path write_clip(const ClipRecord& record, const std::filesystem::path& dir, const json& generator) {
    record.validate();
    std::filesystem::create_directories(dir / "plates");
    json frames = json::array();
    for (std::size_t f = 0; f < record.frames.size(); ++f) {
        const std::string img = frame_name("frame", f), mask = frame_name("mask", f), plate = "plates/" + frame_name("plate", f),
                          pose = frame_name("pose", f);
        write_png(dir / img, record.frames[f]);
        write_png(dir / mask, record.masks[f]);
        write_png(dir / plate, record.plates[f]);
        write_png(dir / pose, record.pose_maps[f]);
        frames.push_back({{"image", img},
                          {"mask", mask},
                          {"plate", plate},
                          {"pose_map", pose},
                          {"frame_index", record.states[f].frame_index},
                          {"theta", record.states[f].theta},
                          {"camera", camera_json(record.cameras[f])}});
    }
    json m = {{"clip_id", record.clip_id}, {"identity_id", record.identity_id}, {"frames", frames}};
    if (!record.texture.empty()) {
        write_png(dir / "texture.png", record.texture);
        m["texture"] = "texture.png";
    }
    if (!generator.is_null()) m["generator"] = generator;
    const auto path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << m.dump(1) << '\n';
    return path;
}

ClipRecord load_clip(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    require(static_cast<bool>(in), "cannot open manifest " + manifest_path.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        reject(manifest_path.string() + ": " + e.what());
    }
    const auto dir = manifest_path.parent_path();
    ClipRecord rec;
    try {
        rec.clip_id = m.at("clip_id").get<std::string>();
        rec.identity_id = m.value("identity_id", rec.clip_id);
        const json& frames = m.at("frames");
        require(frames.is_array() && !frames.empty(), manifest_path.string() + ": no frames");
        for (std::size_t f = 0; f < frames.size(); ++f) {
            const json& fr = frames[f];
            const std::string at = manifest_path.string() + " frame " + std::to_string(f);
            rec.frame_paths.push_back(fr.at("image").get<std::string>());
            rec.mask_paths.push_back(fr.at("mask").get<std::string>());
            rec.plate_paths.push_back(fr.at("plate").get<std::string>());
            rec.pose_map_paths.push_back(fr.at("pose_map").get<std::string>());
            rec.frames.push_back(read_png(dir / rec.frame_paths.back()));
            Image mask = read_png(dir / rec.mask_paths.back());
            require(mask.channels == 1, at + ": mask must be a single-channel image");
            for (double v : mask.data)
                require(v == 0.0 || v == 1.0, at + ": mask has a value other than 0 and 255");
            rec.masks.push_back(std::move(mask));
            rec.plates.push_back(read_png(dir / rec.plate_paths.back()));
            rec.pose_maps.push_back(read_png(dir / rec.pose_map_paths.back()));
            rec.states.push_back({fr.at("theta").get<std::vector<double>>(), fr.value("frame_index", static_cast<int>(f))});
            rec.cameras.push_back(camera_from(fr.at("camera")));
        }
        if (m.contains("texture")) rec.texture = read_png(dir / m.at("texture").get<std::string>());
    } catch (const json::exception& e) {
        reject(manifest_path.string() + ": " + e.what());
    }
    rec.validate();
    return rec;
}

}  // namespace cfs::data
