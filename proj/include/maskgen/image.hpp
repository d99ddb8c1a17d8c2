#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace maskgen {

// 8-bit-backed RGB image in [0,1] floats, row-major, interleaved channels.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<float> rgb;  // h*w*3

    Image() = default;
    Image(int height, int width) : h(height), w(width), rgb(static_cast<size_t>(height) * width * 3, 0.0f) {}

    float* px(int i, int j) { return rgb.data() + (static_cast<size_t>(i) * w + j) * 3; }
    const float* px(int i, int j) const { return rgb.data() + (static_cast<size_t>(i) * w + j) * 3; }
};

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// Bilinear resize; used by the external image-folder ingestion path.
Image resize_bilinear(const Image& src, int h, int w);

// Tile a batch of equally sized images into one grid image (row-major order).
Image tile_images(const std::vector<Image>& imgs, int grid_rows, int grid_cols, int pad = 1);

} // namespace maskgen
