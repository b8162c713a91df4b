#pragma once

#include "cfsynth/image.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

// Textured articulated body: skinning, UV texture transfer, and rasterization
// of pose-map control frames.
namespace cfs::body {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Joint {
    std::string name;
    int parent = -1;  // -1 for the root
    Vec3 pivot = Vec3::Zero();
};

struct BodyMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec2> uv_coords;          // per vertex, in [0,1]^2
    std::vector<Joint> joints;            // parents precede children
    Eigen::MatrixXd joint_weights;        // vertices x joints, rows sum to 1

    // Throws InvalidInput on any broken invariant.
    void validate() const;
    int joint_count() const { return static_cast<int>(joints.size()); }
};

// Axis-angle rotation per joint, three values each.
struct BodyModelState {
    std::vector<double> theta;
    int frame_index = 0;
};

struct Intrinsics {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
};

// World-to-camera transform x_cam = R x + t; the camera looks down +z with
// image y pointing down.
struct CameraPose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    Intrinsics intrinsics;

    void validate() const;
};

struct UVTextureMap {
    Image texels;                        // H_uv x W_uv x 3
    std::vector<unsigned char> validity; // H_uv x W_uv

    int height() const { return texels.height; }
    int width() const { return texels.width; }
    bool valid(int row, int col) const { return validity[static_cast<std::size_t>(row) * texels.width + col] != 0; }
    bool fully_valid() const;
    static UVTextureMap from_image(const Image& rgb);
};

// Pixel-to-surface correspondence d and silhouette s.
struct SurfaceCorrespondence {
    int height = 0, width = 0;
    std::vector<std::optional<Vec2>> surface_coords;
    std::vector<unsigned char> silhouette;

    void validate() const;
};

struct PoseMap {
    Image pixels;                        // H x W x 3
    std::vector<unsigned char> coverage; // H x W
    Vec3 fill = Vec3::Zero();
};

// --- Mesh and skinning ---

Mat3 axis_angle_to_matrix(const Vec3& axis_angle);

// Wraps every joint rotation angle into [0, pi]; the rotation is unchanged.
BodyModelState normalize_state(const BodyModelState& state, int joint_count);

BodyModelState rest_state(int joint_count, int frame_index = 0);

// Linear blend skinning: each joint rotates about its rest pivot, composed
// down the kinematic chain.
BodyMesh pose_mesh(const BodyMesh& mesh, const BodyModelState& state);

// Low-poly box humanoid: 8 parts, 7 joints, 192 vertices, atlas UVs.
BodyMesh make_humanoid();

// Number of box parts in make_humanoid(); part p owns UV cell (p % 4, p / 4)
// of a 4x2 atlas grid.
int humanoid_part_count();

// Text format, one record per line ('#' starts a comment):
//   j <name> <parent> <px> <py> <pz>
//   v <x> <y> <z>
//   vt <u> <v>                 (one per vertex, same order)
//   f <i> <j> <k>              (0-based vertex indices)
//   w <joint> <weight> ...     (one per vertex, sparse pairs)
BodyMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const std::filesystem::path& path, const BodyMesh& mesh);

// --- Cameras ---

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec3& up, const Intrinsics& k);

// Camera on a horizontal circle around the origin. The phase is computed from
// frame mod period, so frame `period` reproduces frame 0 exactly.
CameraPose orbit_camera(int frame, int period, double radius, double height, const Intrinsics& k);

// One camera per line: 9 rotation values (row-major), 3 translation values,
// then fx fy cx cy.
std::vector<CameraPose> load_trajectory(const std::filesystem::path& path);
void save_trajectory(const std::filesystem::path& path, const std::vector<CameraPose>& trajectory);

// Body states, one per line: frame index followed by 3*J rotation values.
std::vector<BodyModelState> load_states(const std::filesystem::path& path);
void save_states(const std::filesystem::path& path, const std::vector<BodyModelState>& states);

// --- Texture transfer ---

// Texel hit by a surface coordinate under nearest-texel lookup: (row, col).
std::pair<int, int> texel_of(const Vec2& uv, int tex_height, int tex_width);

// Writes every silhouette pixel's color to its texel; later pixels in
// row-major order overwrite earlier ones.
UVTextureMap extract_partial_texture(const Image& image, const SurfaceCorrespondence& corr, int tex_height,
                                     int tex_width);

class CompletionMethod {
public:
    virtual ~CompletionMethod() = default;
    virtual UVTextureMap fill(const UVTextureMap& partial) const = 0;
};

// Each hole takes the color of its nearest valid texel (Euclidean distance
// in texel units; ties go to the smaller row, then the smaller column).
class NearestValidFill final : public CompletionMethod {
public:
    UVTextureMap fill(const UVTextureMap& partial) const override;
};

// Runs `method` and checks its contract: valid texels kept bit-exactly,
// output fully valid.
UVTextureMap complete_texture(const UVTextureMap& partial, const CompletionMethod& method);

// --- Rasterization ---

struct RenderOptions {
    int height = 64;
    int width = 64;
    Vec3 fill = Vec3::Zero();
    double near_plane = 1e-3;
};

struct RenderResult {
    PoseMap map;
    SurfaceCorrespondence correspondence;
    std::vector<double> depth;       // +inf where uncovered
    std::vector<int> triangle;       // -1 where uncovered
};

// Perspective projection with a z-buffer; covered pixels take the texel under
// the perspective-correct interpolated UV. Triangles with a vertex at or
// behind the near plane are dropped. On equal depth the lower triangle
// index wins.
RenderResult rasterize(const BodyMesh& mesh, const UVTextureMap& texture, const CameraPose& camera,
                       const RenderOptions& options);

PoseMap render_pose_map(const BodyMesh& mesh, const UVTextureMap& texture, const CameraPose& camera,
                        const RenderOptions& options);

std::vector<PoseMap> render_sequence(const BodyMesh& mesh, const UVTextureMap& texture,
                                     const std::vector<BodyModelState>& states,
                                     const std::vector<CameraPose>& trajectory, const RenderOptions& options);

}  // namespace cfs::body
