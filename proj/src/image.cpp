#include "m3fas/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace m3fas {

void write_png(const Image& img, const std::string& path) {
    require(img.height > 0 && img.width > 0, "cannot write an empty image");
    require(img.rgb.size() == img.height * img.width * 3, "image buffer size mismatch");

    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(std::size_t(img.width) * 3);
    for (Eigen::Index y = 0; y < img.height; ++y) {
        for (Eigen::Index x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::min(1.0, std::max(0.0, img.at(y, x, c)));
                row[std::size_t(x) * 3 + std::size_t(c)] =
                    (unsigned char)std::lround(v * 255.0);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open for reading: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("malformed png: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    // Normalize whatever we were given to 8-bit RGB.
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const Eigen::Index h = Eigen::Index(png_get_image_height(png, info));
    const Eigen::Index w = Eigen::Index(png_get_image_width(png, info));
    Image img = Image::zeros(h, w);
    std::vector<unsigned char> row(std::size_t(w) * 3);
    for (Eigen::Index y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (Eigen::Index x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = double(row[std::size_t(x) * 3 + std::size_t(c)]) / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

Image downscale_area(const Image& img, Eigen::Index target_h, Eigen::Index target_w) {
    require(target_h > 0 && target_w > 0, "downscale target must be positive");
    require(target_h <= img.height && target_w <= img.width,
            "downscale target larger than source");
    Image out = Image::zeros(target_h, target_w);
    for (Eigen::Index y = 0; y < target_h; ++y) {
        const Eigen::Index y0 = y * img.height / target_h;
        const Eigen::Index y1 = (y + 1) * img.height / target_h;
        for (Eigen::Index x = 0; x < target_w; ++x) {
            const Eigen::Index x0 = x * img.width / target_w;
            const Eigen::Index x1 = (x + 1) * img.width / target_w;
            double acc[3] = {0, 0, 0};
            for (Eigen::Index yy = y0; yy < y1; ++yy)
                for (Eigen::Index xx = x0; xx < x1; ++xx)
                    for (int c = 0; c < 3; ++c) acc[c] += img.at(yy, xx, c);
            const double inv = 1.0 / double((y1 - y0) * (x1 - x0));
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = acc[c] * inv;
        }
    }
    return out;
}

}  // namespace m3fas
