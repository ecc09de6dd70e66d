#include "mcan/metrics.hpp"

#include "mcan/dihedral.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

namespace mcan {

namespace {

void check_pair(const Shape& a, const Shape& b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": shape " + Shape(a).str() + " vs " +
                         Shape(b).str());
}

}  // namespace

double psnr_y(const Tensor& ya, const Tensor& yb, int shave) {
    check_pair(ya.shape, yb.shape, "psnr");
    const int64_t h = ya.shape.h, w = ya.shape.w;
    if (h - 2 * shave < 1 || w - 2 * shave < 1)
        throw ShapeError("psnr: nothing left after shaving " + std::to_string(shave));
    double se = 0.0;
    int64_t count = 0;
    for (int64_t n = 0; n < ya.shape.n; ++n)
        for (int64_t c = 0; c < ya.shape.c; ++c) {
            const float* pa = ya.plane(n, c);
            const float* pb = yb.plane(n, c);
            for (int64_t y = shave; y < h - shave; ++y)
                for (int64_t x = shave; x < w - shave; ++x) {
                    const double d = static_cast<double>(pa[y * w + x]) - pb[y * w + x];
                    se += d * d;
                    ++count;
                }
        }
    const double mse = se / static_cast<double>(count);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr(const Image& a, const Image& b, int scale) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("psnr: image dims differ");
    return psnr_y(rgb_to_y(a), rgb_to_y(b), scale);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size) * size);
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double v = std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2 * sigma * sigma));
            w[static_cast<size_t>(y) * size + x] = v;
            sum += v;
        }
    for (auto& v : w) v /= sum;
    return w;
}

}  // namespace

double ssim_y(const Tensor& ya, const Tensor& yb, int shave) {
    check_pair(ya.shape, yb.shape, "ssim");
    constexpr int win = 11;
    constexpr double sigma = 1.5;
    constexpr double c1 = (0.01 * 255) * (0.01 * 255);
    constexpr double c2 = (0.03 * 255) * (0.03 * 255);
    const int64_t h = ya.shape.h - 2 * shave, w = ya.shape.w - 2 * shave;
    if (h < win || w < win)
        throw ShapeError("ssim: image smaller than the 11x11 window after shaving");
    static const std::vector<double> window = gaussian_window(win, sigma);

    double total = 0.0;
    int64_t count = 0;
    const int64_t stride = ya.shape.w;
    for (int64_t n = 0; n < ya.shape.n; ++n) {
        const float* pa = ya.plane(n, 0) + shave * stride + shave;
        const float* pb = yb.plane(n, 0) + shave * stride + shave;
        for (int64_t y = 0; y + win <= h; ++y)
            for (int64_t x = 0; x + win <= w; ++x) {
                double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double g = window[static_cast<size_t>(wy) * win + wx];
                        const double va = pa[(y + wy) * stride + x + wx];
                        const double vb = pb[(y + wy) * stride + x + wx];
                        ma += g * va;
                        mb += g * vb;
                        aa += g * va * va;
                        bb += g * vb * vb;
                        ab += g * va * vb;
                    }
                const double var_a = aa - ma * ma;
                const double var_b = bb - mb * mb;
                const double cov = ab - ma * mb;
                const double num = (2 * ma * mb + c1) * (2 * cov + c2);
                const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
                total += num / den;
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

double ssim(const Image& a, const Image& b, int scale) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("ssim: image dims differ");
    return ssim_y(rgb_to_y(a), rgb_to_y(b), scale);
}

Tensor self_ensemble(const Model& m, const Tensor& i_lr) {
    Tensor acc;
    for (int k = 0; k < 8; ++k) {
        Tensor out = apply_dihedral(forward(m, apply_dihedral(i_lr, k)), dihedral_inverse(k));
        if (k == 0) {
            acc = std::move(out);
        } else {
            for (int64_t i = 0; i < acc.numel(); ++i) acc.data[i] += out.data[i];
        }
    }
    for (auto& v : acc.data) v *= 0.125f;
    return acc;
}

EvalReport evaluate(const Model& m, const std::string& dataset_dir, int scale, bool ensemble) {
    namespace fs = std::filesystem;
    if (m.config.scale != scale)
        throw ShapeError("evaluate: model is set to x" + std::to_string(m.config.scale) +
                         ", dataset evaluated at x" + std::to_string(scale));
    if (!fs::is_directory(dataset_dir))
        throw FormatError("dataset directory '" + dataset_dir + "' does not exist");

    // either a flat directory of HR images, or paired LR/ and HR/ subdirs
    const bool paired = fs::is_directory(fs::path(dataset_dir) / "LR") &&
                        fs::is_directory(fs::path(dataset_dir) / "HR");
    const fs::path hr_dir = paired ? fs::path(dataset_dir) / "HR" : fs::path(dataset_dir);

    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(hr_dir))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FormatError("dataset directory '" + dataset_dir + "' is empty");

    EvalReport rep;
    rep.scale = scale;
    rep.shave = scale;
    for (const auto& path : files) {
        const std::string name = fs::path(path).filename().string();
        Image hr, lr;
        try {
            hr = load_png(path);
            if (paired) {
                lr = load_png((fs::path(dataset_dir) / "LR" / name).string());
                if (lr.width * scale != hr.width || lr.height * scale != hr.height)
                    throw FormatError("LR/HR pair '" + name + "' sizes do not match x" +
                                      std::to_string(scale));
            } else {
                hr = center_crop_multiple(hr, scale);
                lr = bicubic_downscale(hr, scale);
            }
        } catch (const FormatError& e) {
            std::cerr << "warning: skipping " << name << ": " << e.what() << "\n";
            rep.skipped.push_back(name);
            continue;
        }
        Tensor x = to_tensor(lr);
        Tensor y = ensemble ? self_ensemble(m, x) : forward(m, x);
        Image sr = to_image(y);
        rep.rows.push_back({name, psnr(sr, hr, scale), ssim(sr, hr, scale)});
    }
    if (rep.rows.empty()) throw FormatError("no readable images in '" + dataset_dir + "'");
    for (const auto& r : rep.rows) {
        rep.mean_psnr += r.psnr;
        rep.mean_ssim += r.ssim;
    }
    rep.mean_psnr /= static_cast<double>(rep.rows.size());
    rep.mean_ssim /= static_cast<double>(rep.rows.size());
    return rep;
}

std::string EvalReport::table() const {
    std::ostringstream os;
    size_t name_w = 6;
    for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "image" << std::right
       << std::setw(10) << "psnr" << std::setw(10) << "ssim" << "\n";
    os << std::fixed;
    for (const auto& r : rows)
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name << std::right
           << std::setw(10) << std::setprecision(2) << r.psnr << std::setw(10)
           << std::setprecision(4) << r.ssim << "\n";
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "MEAN" << std::right
       << std::setw(10) << std::setprecision(2) << mean_psnr << std::setw(10)
       << std::setprecision(4) << mean_ssim << "\n";
    for (const auto& s : skipped) os << "skipped: " << s << "\n";
    return os.str();
}

std::string EvalReport::records() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    for (const auto& r : rows) os << r.name << "," << r.psnr << "," << r.ssim << "\n";
    os << "MEAN," << mean_psnr << "," << mean_ssim << "\n";
    for (const auto& s : skipped) os << "SKIPPED," << s << ",\n";
    return os.str();
}

}  // namespace mcan
