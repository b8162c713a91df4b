#include "cfsynth/body/body.hpp"

#include "cfsynth/error.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace cfs::body {

void CameraPose::validate() const {
    require(rotation.allFinite() && translation.allFinite(), "camera pose is not finite");
    require((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6,
            "camera rotation is not orthonormal");
    require(intrinsics.fx > 0 && intrinsics.fy > 0 && std::isfinite(intrinsics.fx) && std::isfinite(intrinsics.fy),
            "camera focal lengths must be positive");
    require(std::isfinite(intrinsics.cx) && std::isfinite(intrinsics.cy), "camera principal point not finite");
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up, const Intrinsics& k) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    CameraPose cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.intrinsics = k;
    return cam;
}

CameraPose orbit_camera(int frame, int period, double radius, double height, const Intrinsics& k) {
    require(period >= 1, "orbit period must be at least 1");
    const int phase = ((frame % period) + period) % period;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(phase) / static_cast<double>(period);
    const Vec3 eye(radius * std::sin(angle), height, radius * std::cos(angle));
    return look_at(eye, Vec3(0, 0, 0), Vec3(0, 1, 0), k);
}

namespace {

std::vector<double> parse_numbers(const std::string& line) {
    std::istringstream ls(line);
    std::vector<double> out;
    std::string tok;
    while (ls >> tok) {
        std::size_t used = 0;
        double v;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) reject("not a number: '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

template <class Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("missing file: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(parse_numbers(line));
        } catch (const InvalidInput& e) {
            reject(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace

std::vector<CameraPose> load_trajectory(const std::filesystem::path& path) {
    std::vector<CameraPose> out;
    for_each_record(path, [&](const std::vector<double>& v) {
        require(v.size() == 16, "camera record needs 16 numbers, got " + std::to_string(v.size()));
        CameraPose cam;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) cam.rotation(r, c) = v[static_cast<std::size_t>(r * 3 + c)];
        cam.translation = Vec3(v[9], v[10], v[11]);
        cam.intrinsics = {v[12], v[13], v[14], v[15]};
        cam.validate();
        out.push_back(cam);
    });
    require(!out.empty(), "trajectory " + path.string() + " has no cameras");
    return out;
}

void save_trajectory(const std::filesystem::path& path, const std::vector<CameraPose>& trajectory) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setprecision(17);
    out << "# r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz fx fy cx cy\n";
    for (const auto& cam : trajectory) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) out << cam.rotation(r, c) << ' ';
        out << cam.translation.x() << ' ' << cam.translation.y() << ' ' << cam.translation.z() << ' '
            << cam.intrinsics.fx << ' ' << cam.intrinsics.fy << ' ' << cam.intrinsics.cx << ' ' << cam.intrinsics.cy
            << '\n';
    }
}

std::vector<BodyModelState> load_states(const std::filesystem::path& path) {
    std::vector<BodyModelState> out;
    for_each_record(path, [&](const std::vector<double>& v) {
        require(v.size() >= 4 && (v.size() - 1) % 3 == 0, "state record needs a frame index and 3 values per joint");
        require(v[0] >= 0 && v[0] == std::floor(v[0]), "frame index must be a non-negative integer");
        BodyModelState s;
        s.frame_index = static_cast<int>(v[0]);
        s.theta.assign(v.begin() + 1, v.end());
        for (double t : s.theta) require(std::isfinite(t), "theta not finite");
        out.push_back(std::move(s));
    });
    require(!out.empty(), "state file " + path.string() + " has no records");
    return out;
}

void save_states(const std::filesystem::path& path, const std::vector<BodyModelState>& states) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setprecision(17);
    out << "# frame_index theta[3*joints] (axis-angle, radians)\n";
    for (const auto& s : states) {
        out << s.frame_index;
        for (double t : s.theta) out << ' ' << t;
        out << '\n';
    }
}

}  // namespace cfs::body
