#include "maskgen/image.hpp"

#include "maskgen/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace maskgen {

namespace {

inline uint8_t to_u8(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};

} // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open for write: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng write failure: " + path.string());
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<uint8_t> row(static_cast<size_t>(img.w) * 3);
    for (int i = 0; i < img.h; ++i) {
        for (int j = 0; j < img.w; ++j) {
            const float* p = img.px(i, j);
            row[j * 3 + 0] = to_u8(p[0]);
            row[j * 3 + 1] = to_u8(p[1]);
            row[j * 3 + 2] = to_u8(p[2]);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("missing artifact: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng read failure: " + path.string());
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    // Normalize whatever comes in to 8-bit RGB.
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    Image img(h, w);
    std::vector<uint8_t> row(png_get_rowbytes(png, info));
    for (int i = 0; i < h; ++i) {
        png_read_row(png, row.data(), nullptr);
        for (int j = 0; j < w; ++j) {
            float* p = img.px(i, j);
            p[0] = row[j * 3 + 0] / 255.0f;
            p[1] = row[j * 3 + 1] / 255.0f;
            p[2] = row[j * 3 + 2] / 255.0f;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Image resize_bilinear(const Image& src, int h, int w) {
    Image out(h, w);
    for (int i = 0; i < h; ++i) {
        const float fy = (h > 1) ? static_cast<float>(i) * (src.h - 1) / (h - 1) : 0.0f;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.h - 1);
        const float ty = fy - y0;
        for (int j = 0; j < w; ++j) {
            const float fx = (w > 1) ? static_cast<float>(j) * (src.w - 1) / (w - 1) : 0.0f;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.w - 1);
            const float tx = fx - x0;
            float* o = out.px(i, j);
            for (int c = 0; c < 3; ++c) {
                const float a = src.px(y0, x0)[c] * (1 - tx) + src.px(y0, x1)[c] * tx;
                const float b = src.px(y1, x0)[c] * (1 - tx) + src.px(y1, x1)[c] * tx;
                o[c] = a * (1 - ty) + b * ty;
            }
        }
    }
    return out;
}

Image tile_images(const std::vector<Image>& imgs, int grid_rows, int grid_cols, int pad) {
    if (imgs.empty()) throw DomainError("tile_images: empty image list");
    const int h = imgs[0].h, w = imgs[0].w;
    Image out(grid_rows * (h + pad) + pad, grid_cols * (w + pad) + pad);
    std::fill(out.rgb.begin(), out.rgb.end(), 1.0f);
    for (size_t n = 0; n < imgs.size() && n < static_cast<size_t>(grid_rows) * grid_cols; ++n) {
        const int gr = static_cast<int>(n) / grid_cols;
        const int gc = static_cast<int>(n) % grid_cols;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const float* s = imgs[n].px(i, j);
                float* d = out.px(pad + gr * (h + pad) + i, pad + gc * (w + pad) + j);
                d[0] = s[0];
                d[1] = s[1];
                d[2] = s[2];
            }
    }
    return out;
}

} // namespace maskgen
