#pragma once

#include "mcan/arch.hpp"
#include "mcan/image.hpp"

#include <string>
#include <vector>

namespace mcan {

// PSNR between Y-channel tensors (n,1,h,w) on the [16,235] luma scale with
// peak 255, after shaving `shave` border pixels. +inf when identical.
double psnr_y(const Tensor& ya, const Tensor& yb, int shave);
double psnr(const Image& a, const Image& b, int scale);

// Mean local SSIM on the Y channel: 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, L=255, valid windows only, border shaved by `shave`.
double ssim_y(const Tensor& ya, const Tensor& yb, int shave);
double ssim(const Image& a, const Image& b, int scale);

// Averages the 8 dihedral-transformed forward passes, inverse-transformed.
Tensor self_ensemble(const Model& m, const Tensor& i_lr);

struct EvalRow {
    std::string name;
    double psnr = 0, ssim = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<std::string> skipped;
    double mean_psnr = 0, mean_ssim = 0;
    int scale = 0, shave = 0;

    std::string table() const;
    std::string records() const;
};

// HR images under dataset_dir; LRs are produced by bicubic degradation of
// the center-cropped HR. Rows are ordered by filename.
EvalReport evaluate(const Model& m, const std::string& dataset_dir, int scale, bool ensemble);

}  // namespace mcan
