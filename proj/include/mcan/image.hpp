#pragma once

#include "mcan/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mcan {

// 8-bit RGB, row-major.
struct Image {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels;

    Image() = default;
    Image(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}

    uint8_t& at(int x, int y, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    uint8_t at(int x, int y, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// 8-bit RGB or grayscale PNG (gray replicated to three channels).
// 16-bit and alpha files are rejected with a format diagnostic.
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

// [0,255] -> [0,1] floats, shape (1,3,h,w).
Tensor to_tensor(const Image& img);
// x*255, rounded half away from zero, clamped to [0,255].
Image to_image(const Tensor& t);

// ITU-R BT.601 luma on [0,1] inputs: Y = 16 + 65.481 R + 128.553 G + 24.966 B.
// (n,3,h,w) -> (n,1,h,w), range [16,235].
Tensor rgb_to_y(const Tensor& rgb);
Tensor rgb_to_y(const Image& img);

Image center_crop_multiple(const Image& img, int s);

// Cubic-kernel (a=-0.5) resampling with half-pixel centers. Downscaling
// widens the kernel by the factor (antialiasing); input dims must already
// be divisible by the factor (use center_crop_multiple).
Image bicubic_downscale(const Image& hr, int scale);
Image bicubic_upscale(const Image& lr, int scale);

}  // namespace mcan
