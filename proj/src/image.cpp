#include "mcan/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mcan {

Image load_png(const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        std::string msg = png.message;
        png_image_free(&png);
        throw FormatError("cannot read PNG '" + path + "': " + msg);
    }
    if (png.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&png);
        throw FormatError("'" + path + "': 16-bit PNG not supported (8-bit RGB/gray only)");
    }
    if (png.format & PNG_FORMAT_FLAG_ALPHA) {
        png_image_free(&png);
        throw FormatError("'" + path + "': PNG alpha channel not supported");
    }
    png.format = PNG_FORMAT_RGB;
    Image img(static_cast<int>(png.width), static_cast<int>(png.height));
    if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        throw FormatError("cannot decode PNG '" + path + "': " + msg);
    }
    return img;
}

void save_png(const Image& img, const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        throw FormatError("cannot write PNG '" + path + "': " + msg);
    }
}

Tensor to_tensor(const Image& img) {
    Tensor t({1, 3, img.height, img.width});
    for (int c = 0; c < 3; ++c) {
        float* p = t.plane(0, c);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                p[static_cast<int64_t>(y) * img.width + x] = img.at(x, y, c) * (1.0f / 255.0f);
    }
    return t;
}

Image to_image(const Tensor& t) {
    if (t.shape.n != 1 || t.shape.c != 3)
        throw ShapeError("to_image: expected shape (1,3,h,w), got " + t.shape.str());
    Image img(static_cast<int>(t.shape.w), static_cast<int>(t.shape.h));
    for (int c = 0; c < 3; ++c) {
        const float* p = t.plane(0, c);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const float v = std::round(p[static_cast<int64_t>(y) * img.width + x] * 255.0f);
                img.at(x, y, c) = static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
            }
    }
    return img;
}

Tensor rgb_to_y(const Tensor& rgb) {
    if (rgb.shape.c != 3)
        throw ShapeError("rgb_to_y: expected 3 channels, got " + rgb.shape.str());
    Tensor y({rgb.shape.n, 1, rgb.shape.h, rgb.shape.w});
    const int64_t hw = rgb.shape.h * rgb.shape.w;
    for (int64_t n = 0; n < rgb.shape.n; ++n) {
        const float* r = rgb.plane(n, 0);
        const float* g = rgb.plane(n, 1);
        const float* b = rgb.plane(n, 2);
        float* out = y.plane(n, 0);
        for (int64_t i = 0; i < hw; ++i)
            out[i] = 16.0f + 65.481f * r[i] + 128.553f * g[i] + 24.966f * b[i];
    }
    return y;
}

Tensor rgb_to_y(const Image& img) { return rgb_to_y(to_tensor(img)); }

Image center_crop_multiple(const Image& img, int s) {
    const int w = (img.width / s) * s;
    const int h = (img.height / s) * s;
    if (w == img.width && h == img.height) return img;
    const int x0 = (img.width - w) / 2;
    const int y0 = (img.height - h) / 2;
    Image out(w, h);
    for (int y = 0; y < h; ++y)
        std::memcpy(out.pixels.data() + static_cast<size_t>(y) * w * 3,
                    img.pixels.data() + (static_cast<size_t>(y0 + y) * img.width + x0) * 3,
                    static_cast<size_t>(w) * 3);
    return out;
}

namespace {

double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::vector<int> index;     // flattened [out][n_taps]
    std::vector<double> weight;
    int n_taps = 0;
};

// Half-pixel-center taps for one axis; kernel widened when shrinking.
Taps make_taps(int in_size, int out_size) {
    const double scale = static_cast<double>(in_size) / out_size;
    const double support = scale > 1.0 ? 2.0 * scale : 2.0;
    Taps t;
    t.n_taps = static_cast<int>(std::ceil(support)) * 2 + 1;
    t.index.resize(static_cast<size_t>(out_size) * t.n_taps);
    t.weight.assign(static_cast<size_t>(out_size) * t.n_taps, 0.0);
    for (int o = 0; o < out_size; ++o) {
        const double center = (o + 0.5) * scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support));
        double sum = 0.0;
        for (int k = 0; k < t.n_taps; ++k) {
            const int src = lo + k;
            double w = cubic_kernel(scale > 1.0 ? (src - center) / scale : (src - center));
            t.index[static_cast<size_t>(o) * t.n_taps + k] = std::clamp(src, 0, in_size - 1);
            t.weight[static_cast<size_t>(o) * t.n_taps + k] = w;
            sum += w;
        }
        for (int k = 0; k < t.n_taps; ++k)
            t.weight[static_cast<size_t>(o) * t.n_taps + k] /= sum;
    }
    return t;
}

Image cubic_resize(const Image& img, int out_w, int out_h) {
    const Taps tx = make_taps(img.width, out_w);
    const Taps ty = make_taps(img.height, out_h);

    // horizontal pass into doubles, then vertical, then quantize
    std::vector<double> mid(static_cast<size_t>(img.height) * out_w * 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = 0; k < tx.n_taps; ++k)
                    acc += tx.weight[static_cast<size_t>(x) * tx.n_taps + k] *
                           img.at(tx.index[static_cast<size_t>(x) * tx.n_taps + k], y, c);
                mid[(static_cast<size_t>(y) * out_w + x) * 3 + c] = acc;
            }

    Image out(out_w, out_h);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = 0; k < ty.n_taps; ++k)
                    acc += ty.weight[static_cast<size_t>(y) * ty.n_taps + k] *
                           mid[(static_cast<size_t>(ty.index[static_cast<size_t>(y) * ty.n_taps + k]) *
                                    out_w + x) * 3 + c];
                out.at(x, y, c) = static_cast<uint8_t>(std::clamp(std::round(acc), 0.0, 255.0));
            }
    return out;
}

}  // namespace

Image bicubic_downscale(const Image& hr, int scale) {
    if (scale < 1) throw ShapeError("bicubic_downscale: scale must be >= 1");
    if (hr.width % scale != 0 || hr.height % scale != 0)
        throw ShapeError("bicubic_downscale: dims not divisible by scale (crop first)");
    if (scale == 1) return hr;
    return cubic_resize(hr, hr.width / scale, hr.height / scale);
}

Image bicubic_upscale(const Image& lr, int scale) {
    if (scale < 1) throw ShapeError("bicubic_upscale: scale must be >= 1");
    if (scale == 1) return lr;
    return cubic_resize(lr, lr.width * scale, lr.height * scale);
}

}  // namespace mcan
