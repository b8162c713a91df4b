#include "cfsynth/body/body.hpp"

#include "cfsynth/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace cfs::body {

void BodyMesh::validate() const {
    const auto nv = static_cast<int>(vertices.size());
    require(nv > 0, "mesh has no vertices");
    require(uv_coords.size() == vertices.size(), "mesh needs one UV per vertex");
    require(!joints.empty(), "mesh has no joints");
    for (std::size_t j = 0; j < joints.size(); ++j) {
        const int p = joints[j].parent;
        require(p < static_cast<int>(j) && (p >= 0 || j == 0) && (j != 0 || p == -1),
                "joint " + std::to_string(j) + " must follow its parent; only joint 0 is a root");
    }
    for (std::size_t t = 0; t < triangles.size(); ++t)
        for (int idx : triangles[t])
            require(idx >= 0 && idx < nv, "triangle " + std::to_string(t) + " has invalid vertex index " +
                                              std::to_string(idx));
    for (int i = 0; i < nv; ++i) {
        const Vec2& uv = uv_coords[static_cast<std::size_t>(i)];
        require(uv.allFinite() && uv.x() >= 0 && uv.x() <= 1 && uv.y() >= 0 && uv.y() <= 1,
                "UV of vertex " + std::to_string(i) + " outside [0,1]^2");
        require(vertices[static_cast<std::size_t>(i)].allFinite(), "vertex " + std::to_string(i) + " not finite");
    }
    require(joint_weights.rows() == nv && joint_weights.cols() == joint_count(), "skinning weight matrix shape");
    for (int i = 0; i < nv; ++i) {
        require((joint_weights.row(i).array() >= 0).all(), "negative skinning weight on vertex " + std::to_string(i));
        require(std::abs(joint_weights.row(i).sum() - 1.0) <= 1e-6,
                "skinning weights of vertex " + std::to_string(i) + " do not sum to 1");
    }
}

Mat3 axis_angle_to_matrix(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle < 1e-300) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

BodyModelState rest_state(int joint_count, int frame_index) {
    return {std::vector<double>(static_cast<std::size_t>(joint_count) * 3, 0.0), frame_index};
}

BodyModelState normalize_state(const BodyModelState& state, int joint_count) {
    require(state.theta.size() == static_cast<std::size_t>(joint_count) * 3,
            "theta has " + std::to_string(state.theta.size()) + " values, expected 3 per joint (" +
                std::to_string(joint_count) + " joints)");
    require(state.frame_index >= 0, "frame index must be non-negative");
    for (double v : state.theta) require(std::isfinite(v), "theta contains a non-finite value");
    BodyModelState out = state;
    constexpr double pi = std::numbers::pi;
    for (int j = 0; j < joint_count; ++j) {
        Vec3 r(out.theta[3 * j], out.theta[3 * j + 1], out.theta[3 * j + 2]);
        const double angle = r.norm();
        if (angle <= pi) continue;
        const Vec3 axis = r / angle;
        double wrapped = std::fmod(angle, 2 * pi);
        if (wrapped > pi) wrapped -= 2 * pi;  // negative: rotate the other way about the same axis
        r = axis * wrapped;
        for (int k = 0; k < 3; ++k) out.theta[3 * j + k] = r[k];
    }
    return out;
}

BodyMesh pose_mesh(const BodyMesh& mesh, const BodyModelState& state) {
    const BodyModelState s = normalize_state(state, mesh.joint_count());
    const int J = mesh.joint_count();
    if (std::all_of(s.theta.begin(), s.theta.end(), [](double t) { return t == 0.0; })) return mesh;
    require(mesh.joint_weights.rows() == static_cast<Eigen::Index>(mesh.vertices.size()) &&
                mesh.joint_weights.cols() == J,
            "skinning weight matrix shape");
    std::vector<Eigen::Affine3d> global(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
        const Joint& jt = mesh.joints[static_cast<std::size_t>(j)];
        const Mat3 R = axis_angle_to_matrix(Vec3(s.theta[3 * j], s.theta[3 * j + 1], s.theta[3 * j + 2]));
        Eigen::Affine3d local = Eigen::Affine3d::Identity();
        local.linear() = R;
        local.translation() = jt.pivot - R * jt.pivot;
        global[static_cast<std::size_t>(j)] = jt.parent < 0 ? local : global[static_cast<std::size_t>(jt.parent)] * local;
    }
    BodyMesh out = mesh;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        Vec3 acc = Vec3::Zero();
        for (int j = 0; j < J; ++j) {
            const double w = mesh.joint_weights(static_cast<Eigen::Index>(i), j);
            if (w != 0.0) acc += w * (global[static_cast<std::size_t>(j)] * mesh.vertices[i]);
        }
        out.vertices[i] = acc;
    }
    return out;
}

namespace {

struct PartSpec {
    Vec3 center;
    Vec3 size;
    int joint;
    int blend_sign;  // +1: top face blends with parent, -1: bottom face, 0: rigid
};

constexpr int kParts = 8;
constexpr double kBlendToParent = 0.3;
constexpr double kUvInset = 0.004;

}  // namespace

int humanoid_part_count() { return kParts; }

BodyMesh make_humanoid() {
    BodyMesh mesh;
    mesh.joints = {
        {"pelvis", -1, Vec3(0, 0, 0)},        {"torso", 0, Vec3(0, 0.1, 0)},
        {"head", 1, Vec3(0, 0.72, 0)},        {"left_arm", 1, Vec3(0.28, 0.66, 0)},
        {"right_arm", 1, Vec3(-0.28, 0.66, 0)}, {"left_leg", 0, Vec3(0.1, -0.1, 0)},
        {"right_leg", 0, Vec3(-0.1, -0.1, 0)},
    };
    const PartSpec parts[kParts] = {
        {Vec3(0, 0, 0), Vec3(0.36, 0.2, 0.22), 0, 0},
        {Vec3(0, 0.4, 0), Vec3(0.42, 0.6, 0.24), 1, -1},
        {Vec3(0, 0.86, 0), Vec3(0.24, 0.26, 0.24), 2, -1},
        {Vec3(0.28, 0.38, 0), Vec3(0.12, 0.56, 0.12), 3, +1},
        {Vec3(-0.28, 0.38, 0), Vec3(0.12, 0.56, 0.12), 4, +1},
        {Vec3(0.1, -0.5, 0), Vec3(0.15, 0.8, 0.15), 5, +1},
        {Vec3(-0.1, -0.5, 0), Vec3(0.15, 0.8, 0.15), 6, +1},
        {Vec3(0, 0.86, 0.15), Vec3(0.05, 0.05, 0.06), 2, 0},
    };
    const int J = static_cast<int>(mesh.joints.size());
    std::vector<Eigen::VectorXd> weights;
    for (int p = 0; p < kParts; ++p) {
        const PartSpec& part = parts[p];
        const double cell_u = (p % 4) * 0.25, cell_v = (p / 4) * 0.5;
        for (int f = 0; f < 6; ++f) {
            const int axis = f / 2;
            const double sign = (f % 2 == 0) ? 1.0 : -1.0;
            const int t1 = (axis + 1) % 3, t2 = (axis + 2) % 3;
            const double fu = cell_u + (f % 3) * (0.25 / 3), fv = cell_v + (f / 3) * 0.25;
            const int base = static_cast<int>(mesh.vertices.size());
            const double corners[4][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
            for (const auto& c : corners) {
                Vec3 v = part.center;
                v[axis] += sign * part.size[axis] / 2;
                v[t1] += c[0] * part.size[t1] / 2;
                v[t2] += c[1] * part.size[t2] / 2;
                mesh.vertices.push_back(v);
                const double a = (c[0] + 1) / 2, b = (c[1] + 1) / 2;
                mesh.uv_coords.emplace_back(fu + kUvInset + a * (0.25 / 3 - 2 * kUvInset),
                                            fv + kUvInset + b * (0.25 - 2 * kUvInset));
                Eigen::VectorXd w = Eigen::VectorXd::Zero(J);
                const int parent = mesh.joints[static_cast<std::size_t>(part.joint)].parent;
                const bool blended = part.blend_sign != 0 && parent >= 0 &&
                                     (v.y() - part.center.y()) * part.blend_sign > 0;
                if (blended) {
                    w[part.joint] = 1.0 - kBlendToParent;
                    w[parent] = kBlendToParent;
                } else {
                    w[part.joint] = 1.0;
                }
                weights.push_back(w);
            }
            mesh.triangles.push_back({base, base + 1, base + 2});
            mesh.triangles.push_back({base, base + 2, base + 3});
        }
    }
    mesh.joint_weights.resize(static_cast<Eigen::Index>(weights.size()), J);
    for (std::size_t i = 0; i < weights.size(); ++i) mesh.joint_weights.row(static_cast<Eigen::Index>(i)) = weights[i];
    mesh.validate();
    return mesh;
}

BodyMesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("missing mesh file: " + path.string());
    BodyMesh mesh;
    std::vector<std::vector<std::pair<int, double>>> sparse;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        auto fail = [&](const std::string& why) {
            reject(path.string() + ":" + std::to_string(lineno) + ": " + why);
        };
        if (tag == "j") {
            Joint j;
            if (!(ls >> j.name >> j.parent >> j.pivot.x() >> j.pivot.y() >> j.pivot.z())) fail("bad joint record");
            mesh.joints.push_back(j);
        } else if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z())) fail("bad vertex record");
            mesh.vertices.push_back(v);
        } else if (tag == "vt") {
            Vec2 uv;
            if (!(ls >> uv.x() >> uv.y())) fail("bad UV record");
            mesh.uv_coords.push_back(uv);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            if (!(ls >> f[0] >> f[1] >> f[2])) fail("bad face record");
            mesh.triangles.push_back(f);
        } else if (tag == "w") {
            std::vector<std::pair<int, double>> ws;
            int j;
            double w;
            while (ls >> j >> w) ws.emplace_back(j, w);
            if (ws.empty()) fail("empty weight record");
            sparse.push_back(std::move(ws));
        } else {
            fail("unknown record '" + tag + "'");
        }
    }
    require(sparse.size() == mesh.vertices.size(), path.string() + ": need one weight record per vertex");
    const int J = mesh.joint_count();
    mesh.joint_weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mesh.vertices.size()), J);
    for (std::size_t i = 0; i < sparse.size(); ++i)
        for (auto [j, w] : sparse[i]) {
            require(j >= 0 && j < J, path.string() + ": weight references unknown joint " + std::to_string(j));
            mesh.joint_weights(static_cast<Eigen::Index>(i), j) += w;
        }
    mesh.validate();
    return mesh;
}

void save_mesh(const std::filesystem::path& path, const BodyMesh& mesh) {
    mesh.validate();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << std::setprecision(17);
    out << "# cfsynth body mesh\n";
    for (const auto& j : mesh.joints)
        out << "j " << j.name << ' ' << j.parent << ' ' << j.pivot.x() << ' ' << j.pivot.y() << ' ' << j.pivot.z()
            << '\n';
    for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& uv : mesh.uv_coords) out << "vt " << uv.x() << ' ' << uv.y() << '\n';
    for (const auto& f : mesh.triangles) out << "f " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    for (Eigen::Index i = 0; i < mesh.joint_weights.rows(); ++i) {
        out << 'w';
        for (Eigen::Index j = 0; j < mesh.joint_weights.cols(); ++j)
            if (mesh.joint_weights(i, j) != 0.0) out << ' ' << j << ' ' << mesh.joint_weights(i, j);
        out << '\n';
    }
}

}  // namespace cfs::body
