#pragma once

#include "m3fas/types.hpp"

#include <string>

namespace m3fas {

// H x W x 3 intensity grid, interleaved RGB, values in [0, 1].
struct Image {
    Eigen::Index height = 0;
    Eigen::Index width = 0;
    Eigen::ArrayXd rgb;  // row-major, 3 values per pixel

    static Image zeros(Eigen::Index h, Eigen::Index w) {
        Image img;
        img.height = h;
        img.width = w;
        img.rgb = Eigen::ArrayXd::Zero(h * w * 3);
        return img;
    }
    double& at(Eigen::Index y, Eigen::Index x, int c) { return rgb[(y * width + x) * 3 + c]; }
    double at(Eigen::Index y, Eigen::Index x, int c) const {
        return rgb[(y * width + x) * 3 + c];
    }
    void clamp01() { rgb = rgb.cwiseMax(0.0).cwiseMin(1.0); }
};

// 8-bit RGB PNG.
void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

// Block-average downscale to a square target size (used to feed the vision
// branch).
Image downscale_area(const Image& img, Eigen::Index target_h, Eigen::Index target_w);

}  // namespace m3fas
