#pragma once

#include <filesystem>
#include <vector>

namespace cfs {

// Row-major, channels-last image with values nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    bool same_dims(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }
    bool empty() const { return data.empty(); }
    bool operator==(const Image&) const = default;
};

// 8-bit PNG. Grayscale files load as one channel, RGB/RGBA as three (alpha dropped).
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

// Value after an 8-bit store/load cycle.
double quantize8(double v);
Image quantize8(const Image& img);

Image flip_horizontal(const Image& img);

}  // namespace cfs
