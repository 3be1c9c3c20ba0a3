#include "core/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "core/kernels.hpp"

namespace df::img {

Tensor read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("png read error: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int W = (int)png_get_image_width(png, info);
    const int H = (int)png_get_image_height(png, info);
    std::vector<png_byte> row(W * 3);
    Tensor out({3, H, W});
    for (int y = 0; y < H; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                out[(int64_t)c * H * W + (int64_t)y * W + x] = (float)row[x * 3 + c] / 127.5f - 1.f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

void write_png(const std::string& path, const Tensor& chw) {
    if (chw.ndim() != 3 || chw.dim(0) != 3) throw std::invalid_argument("write_png: expects [3,H,W]");
    const int H = chw.dim(1), W = chw.dim(2);
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("png write error: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(W * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = chw[(int64_t)c * H * W + (int64_t)y * W + x];
                row[x * 3 + c] = (png_byte)std::clamp((int)std::lround((v + 1.f) * 127.5f), 0, 255);
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

static void split_batch(const Tensor& t, int& B, int& C, int& H, int& W) {
    if (t.ndim() == 3) {
        B = 1;
        C = t.dim(0);
        H = t.dim(1);
        W = t.dim(2);
    } else if (t.ndim() == 4) {
        B = t.dim(0);
        C = t.dim(1);
        H = t.dim(2);
        W = t.dim(3);
    } else {
        throw std::invalid_argument("image op: expects [C,H,W] or [B,C,H,W]");
    }
}

Tensor downsample_area(const Tensor& image, int target) {
    int B, C, H, W;
    split_batch(image, B, C, H, W);
    if (H != W) throw std::invalid_argument("downsample_area: square images only");
    if (target > H) throw std::out_of_range("downsample_area: upsampling request");
    std::vector<int> shape = image.shape();
    shape[image.ndim() - 1] = target;
    shape[image.ndim() - 2] = target;
    Tensor out(shape);
    kern::area_resize(B * C, H, W, target, target, image.data(), out.data());
    return out;
}

Tensor resize_bilinear(const Tensor& image, int target) {
    int B, C, H, W;
    split_batch(image, B, C, H, W);
    std::vector<int> shape = image.shape();
    shape[image.ndim() - 1] = target;
    shape[image.ndim() - 2] = target;
    Tensor out(shape);
    kern::bilinear_resize(B * C, H, W, target, target, image.data(), out.data());
    return out;
}

double mse(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    double sum = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = (double)a[i] - (double)b[i];
        sum += d * d;
    }
    return sum / (double)a.numel();
}

double psnr(const Tensor& a, const Tensor& b) {
    // [-1,1] -> [0,1]: squared differences scale by 1/4
    const double m = mse(a, b) * 0.25;
    if (m <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / m));
}

double ssim(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b) || a.ndim() != 3) throw std::invalid_argument("ssim: expects matching [C,H,W]");
    const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
    const int win = std::min(8, std::min(H, W));
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // L = 1
    double total = 0.0;
    int64_t count = 0;
    for (int c = 0; c < C; ++c) {
        const float* pa = a.data() + (int64_t)c * H * W;
        const float* pb = b.data() + (int64_t)c * H * W;
        for (int y = 0; y + win <= H; y += 2) {
            for (int x = 0; x + win <= W; x += 2) {
                double ma = 0, mb = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        ma += (pa[(y + dy) * W + x + dx] + 1.0) * 0.5;
                        mb += (pb[(y + dy) * W + x + dx] + 1.0) * 0.5;
                    }
                const double n = (double)win * win;
                ma /= n;
                mb /= n;
                double va = 0, vb = 0, cov = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        const double da = (pa[(y + dy) * W + x + dx] + 1.0) * 0.5 - ma;
                        const double db = (pb[(y + dy) * W + x + dx] + 1.0) * 0.5 - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n - 1;
                vb /= n - 1;
                cov /= n - 1;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return count ? total / (double)count : 1.0;
}

Tensor make_grid(const std::vector<Tensor>& cells, int rows, int cols) {
    if (cells.empty()) throw std::invalid_argument("make_grid: no cells");
    const int R = cells[0].dim(1);
    const int gap = 2;
    const int GH = rows * R + (rows - 1) * gap;
    const int GW = cols * R + (cols - 1) * gap;
    Tensor grid = Tensor::full({3, GH, GW}, 1.f);
    for (int i = 0; i < (int)cells.size() && i < rows * cols; ++i) {
        const Tensor& cell = cells[i];
        if (cell.dim(1) != R || cell.dim(2) != R)
            throw std::invalid_argument("make_grid: cell size mismatch");
        const int r = i / cols, c = i % cols;
        const int oy = r * (R + gap), ox = c * (R + gap);
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < R; ++y)
                for (int x = 0; x < R; ++x)
                    grid[((int64_t)ch * GH + oy + y) * GW + ox + x] =
                        cell[((int64_t)ch * R + y) * R + x];
    }
    return grid;
}

}  // namespace df::img
