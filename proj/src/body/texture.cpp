#include "cfsynth/body/body.hpp"

#include "cfsynth/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cfs::body {

bool UVTextureMap::fully_valid() const {
    return std::all_of(validity.begin(), validity.end(), [](unsigned char v) { return v != 0; });
}

UVTextureMap UVTextureMap::from_image(const Image& rgb) {
    require(rgb.channels == 3, "texture image must be RGB");
    UVTextureMap t;
    t.texels = rgb;
    t.validity.assign(static_cast<std::size_t>(rgb.height) * rgb.width, 1);
    return t;
}

void SurfaceCorrespondence::validate() const {
    const std::size_t n = static_cast<std::size_t>(height) * width;
    require(surface_coords.size() == n && silhouette.size() == n, "correspondence arrays do not match its size");
    for (std::size_t i = 0; i < n; ++i)
        require(!surface_coords[i] || silhouette[i], "surface coordinate present outside the silhouette");
}

std::pair<int, int> texel_of(const Vec2& uv, int tex_height, int tex_width) {
    const int col = std::min(static_cast<int>(std::floor(uv.x() * tex_width)), tex_width - 1);
    const int row = std::min(static_cast<int>(std::floor(uv.y() * tex_height)), tex_height - 1);
    return {std::max(row, 0), std::max(col, 0)};
}

UVTextureMap extract_partial_texture(const Image& image, const SurfaceCorrespondence& corr, int tex_height,
                                     int tex_width) {
    require(image.height == corr.height && image.width == corr.width,
            "image and correspondence differ in pixel dimensions");
    require(image.channels == 3, "reference image must be RGB");
    require(tex_height > 0 && tex_width > 0, "texture dimensions must be positive");
    corr.validate();
    UVTextureMap out;
    out.texels = Image(tex_height, tex_width, 3);
    out.validity.assign(static_cast<std::size_t>(tex_height) * tex_width, 0);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * image.width + x;
            if (!corr.silhouette[i]) continue;
            if (!corr.surface_coords[i]) continue;
            const Vec2& uv = *corr.surface_coords[i];
            require(uv.allFinite() && uv.x() >= 0 && uv.x() <= 1 && uv.y() >= 0 && uv.y() <= 1,
                    "surface coordinate of pixel (" + std::to_string(y) + "," + std::to_string(x) +
                        ") outside [0,1]^2");
            const auto [row, col] = texel_of(uv, tex_height, tex_width);
            for (int c = 0; c < 3; ++c) out.texels.at(row, col, c) = image.at(y, x, c);
            out.validity[static_cast<std::size_t>(row) * tex_width + col] = 1;
        }
    return out;
}

UVTextureMap NearestValidFill::fill(const UVTextureMap& partial) const {
    const int H = partial.height(), W = partial.width();
    require(std::any_of(partial.validity.begin(), partial.validity.end(), [](unsigned char v) { return v != 0; }),
            "no texture evidence: every texel is invalid");
    UVTextureMap out = partial;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            if (partial.valid(r, c)) continue;
            // Expanding square rings; a ring at Chebyshev radius k holds no
            // point closer than k, so stop once k^2 exceeds the best distance.
            long best_d = std::numeric_limits<long>::max();
            int br = -1, bc = -1;
            for (int k = 1; k < std::max(H, W); ++k) {
                if (static_cast<long>(k) * k > best_d) break;
                for (int rr = std::max(0, r - k); rr <= std::min(H - 1, r + k); ++rr) {
                    const bool edge_row = (rr == r - k || rr == r + k);
                    const int step = edge_row ? 1 : 2 * k;
                    for (int cc = c - k; cc <= c + k; cc += step) {
                        if (cc < 0 || cc >= W || !partial.valid(rr, cc)) continue;
                        const long d = static_cast<long>(rr - r) * (rr - r) + static_cast<long>(cc - c) * (cc - c);
                        if (d < best_d || (d == best_d && (rr < br || (rr == br && cc < bc)))) {
                            best_d = d;
                            br = rr;
                            bc = cc;
                        }
                    }
                }
            }
            for (int ch = 0; ch < 3; ++ch) out.texels.at(r, c, ch) = partial.texels.at(br, bc, ch);
            out.validity[static_cast<std::size_t>(r) * W + c] = 1;
        }
    return out;
}

UVTextureMap complete_texture(const UVTextureMap& partial, const CompletionMethod& method) {
    require(partial.texels.channels == 3 &&
                partial.validity.size() == static_cast<std::size_t>(partial.height()) * partial.width(),
            "malformed texture map");
    require(std::any_of(partial.validity.begin(), partial.validity.end(), [](unsigned char v) { return v != 0; }),
            "no texture evidence: every texel is invalid");
    UVTextureMap out = method.fill(partial);
    if (!out.fully_valid() || out.height() != partial.height() || out.width() != partial.width())
        throw std::logic_error("completion method left holes or changed the texture size");
    for (int r = 0; r < partial.height(); ++r)
        for (int c = 0; c < partial.width(); ++c) {
            if (!partial.valid(r, c)) continue;
            for (int ch = 0; ch < 3; ++ch)
                if (out.texels.at(r, c, ch) != partial.texels.at(r, c, ch))
                    throw std::logic_error("completion method altered a valid texel");
        }
    return out;
}

}  // namespace cfs::body
