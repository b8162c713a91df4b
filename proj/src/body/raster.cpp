#include "cfsynth/body/body.hpp"

#include "cfsynth/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cfs::body {

namespace {

double edge(const Vec2& a, const Vec2& b, const Vec2& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

}  // namespace

RenderResult rasterize(const BodyMesh& mesh, const UVTextureMap& texture, const CameraPose& camera,
                       const RenderOptions& options) {
    require(options.height > 0 && options.width > 0, "render size must be positive");
    require(options.near_plane > 0, "near plane must be positive");
    camera.validate();
    mesh.validate();
    require(texture.texels.channels == 3 && texture.height() > 0 && texture.width() > 0, "texture must be RGB");
    require(texture.fully_valid(), "texture map has invalid texels; complete it first");

    const int H = options.height, W = options.width;
    const std::size_t n = static_cast<std::size_t>(H) * W;
    RenderResult res;
    res.map.pixels = Image(H, W, 3);
    res.map.coverage.assign(n, 0);
    res.map.fill = options.fill;
    res.correspondence.height = H;
    res.correspondence.width = W;
    res.correspondence.surface_coords.assign(n, std::nullopt);
    res.correspondence.silhouette.assign(n, 0);
    res.depth.assign(n, std::numeric_limits<double>::infinity());
    res.triangle.assign(n, -1);
    std::vector<Vec2> uv_at(n, Vec2::Zero());

    const auto& k = camera.intrinsics;
    std::vector<Vec3> cam_pts(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
        cam_pts[i] = camera.rotation * mesh.vertices[i] + camera.translation;

    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        Vec2 p[3];
        double inv_z[3];
        bool dropped = false;
        for (int j = 0; j < 3; ++j) {
            const Vec3& c = cam_pts[static_cast<std::size_t>(tri[j])];
            if (c.z() <= options.near_plane) {
                dropped = true;
                break;
            }
            inv_z[j] = 1.0 / c.z();
            p[j] = Vec2(k.fx * c.x() * inv_z[j] + k.cx, k.fy * c.y() * inv_z[j] + k.cy);
        }
        if (dropped) continue;
        const double area = edge(p[0], p[1], p[2]);
        if (area == 0.0 || !std::isfinite(area)) continue;

        const double xmin = std::min({p[0].x(), p[1].x(), p[2].x()});
        const double xmax = std::max({p[0].x(), p[1].x(), p[2].x()});
        const double ymin = std::min({p[0].y(), p[1].y(), p[2].y()});
        const double ymax = std::max({p[0].y(), p[1].y(), p[2].y()});
        const int x0 = std::max(0, static_cast<int>(std::floor(xmin - 0.5)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(xmax - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(ymax - 0.5)));

        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const Vec2 q(x + 0.5, y + 0.5);
                double w0 = edge(p[1], p[2], q), w1 = edge(p[2], p[0], q), w2 = edge(p[0], p[1], q);
                if (area < 0) {
                    w0 = -w0;
                    w1 = -w1;
                    w2 = -w2;
                }
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                const double a = std::abs(area);
                const double b0 = w0 / a, b1 = w1 / a, b2 = w2 / a;
                const double iz = b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2];
                const double z = 1.0 / iz;
                const std::size_t i = static_cast<std::size_t>(y) * W + x;
                if (!(z < res.depth[i])) continue;
                const Vec2 uv = (b0 * inv_z[0] * mesh.uv_coords[static_cast<std::size_t>(tri[0])] +
                                 b1 * inv_z[1] * mesh.uv_coords[static_cast<std::size_t>(tri[1])] +
                                 b2 * inv_z[2] * mesh.uv_coords[static_cast<std::size_t>(tri[2])]) *
                                z;
                res.depth[i] = z;
                res.triangle[i] = static_cast<int>(t);
                uv_at[i] = uv.cwiseMax(0.0).cwiseMin(1.0);
            }
    }

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (res.triangle[i] < 0) {
                for (int c = 0; c < 3; ++c) res.map.pixels.at(y, x, c) = options.fill[c];
                continue;
            }
            const auto [row, col] = texel_of(uv_at[i], texture.height(), texture.width());
            for (int c = 0; c < 3; ++c) res.map.pixels.at(y, x, c) = texture.texels.at(row, col, c);
            res.map.coverage[i] = 1;
            res.correspondence.silhouette[i] = 1;
            res.correspondence.surface_coords[i] = uv_at[i];
        }
    return res;
}

PoseMap render_pose_map(const BodyMesh& mesh, const UVTextureMap& texture, const CameraPose& camera,
                        const RenderOptions& options) {
    return rasterize(mesh, texture, camera, options).map;
}

std::vector<PoseMap> render_sequence(const BodyMesh& mesh, const UVTextureMap& texture,
                                     const std::vector<BodyModelState>& states,
                                     const std::vector<CameraPose>& trajectory, const RenderOptions& options) {
    require(!states.empty(), "empty body state sequence");
    require(states.size() == trajectory.size(), "state sequence has " + std::to_string(states.size()) +
                                                    " frames but trajectory has " +
                                                    std::to_string(trajectory.size()));
    std::vector<PoseMap> out;
    out.reserve(states.size());
    for (std::size_t f = 0; f < states.size(); ++f)
        out.push_back(render_pose_map(pose_mesh(mesh, states[f]), texture, trajectory[f], options));
    return out;
}

}  // namespace cfs::body
