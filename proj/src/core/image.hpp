#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

// Image values are CHW float in [-1, 1] everywhere inside the library;
// PNG I/O maps to/from 8-bit RGB.
namespace df::img {

Tensor read_png(const std::string& path);               // [3,H,W]
void write_png(const std::string& path, const Tensor& chw);

// Area-average downsample of [3,H,W] or a batch [B,3,H,W] to target x target.
// Throws std::out_of_range if target exceeds the source resolution.
Tensor downsample_area(const Tensor& image, int target);

// Bilinear resize (used to bring low-res reconstructions up to R for metrics).
Tensor resize_bilinear(const Tensor& image, int target);

// PSNR on [0,1]-rescaled pixels, capped at 99 dB for identical inputs.
double psnr(const Tensor& a, const Tensor& b);

// Mean SSIM over channels, 8x8 uniform windows on [0,1]-rescaled pixels.
double ssim(const Tensor& a, const Tensor& b);

double mse(const Tensor& a, const Tensor& b);

// Assembles images (all [3,R,R]) into a rows x cols grid with a 2px divider.
Tensor make_grid(const std::vector<Tensor>& cells, int rows, int cols);

}  // namespace df::img
