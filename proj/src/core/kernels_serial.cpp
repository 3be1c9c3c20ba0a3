// Plain single-threaded reference kernels. Written independently of the
// OpenMP versions but with the same per-element accumulation order, so the
// tests can require bit-exact agreement.
#include "core/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace df::kern::serial {

void gemm_nn(int m, int k, int n, const float* A, const float* B, float* C, bool acc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            float sum = acc ? C[(int64_t)i * n + j] : 0.f;
            for (int p = 0; p < k; ++p) sum += A[(int64_t)i * k + p] * B[(int64_t)p * n + j];
            C[(int64_t)i * n + j] = sum;
        }
    }
}

void bmm_nn(int G, int m, int k, int n, const float* A, const float* B, float* C, bool acc) {
    for (int g = 0; g < G; ++g)
        gemm_nn(m, k, n, A + (int64_t)g * m * k, B + (int64_t)g * k * n, C + (int64_t)g * m * n, acc);
}

void transpose2d(int m, int n, const float* A, float* AT) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) AT[(int64_t)j * m + i] = A[(int64_t)i * n + j];
}

void softmax_rows(int m, int n, const float* x, float* y) {
    for (int i = 0; i < m; ++i) {
        const float* xr = x + (int64_t)i * n;
        float* yr = y + (int64_t)i * n;
        float mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        float sum = 0.f;
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const float inv = 1.f / sum;
        for (int j = 0; j < n; ++j) yr[j] *= inv;
    }
}

void layernorm_fwd(int m, int n, const float* x, const float* gamma, const float* beta,
                   float* y, float* mean, float* rstd) {
    const float eps = 1e-5f;
    for (int i = 0; i < m; ++i) {
        const float* xr = x + (int64_t)i * n;
        float mu = 0.f;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= (float)n;
        float var = 0.f;
        for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= (float)n;
        const float rs = 1.f / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        for (int j = 0; j < n; ++j) y[(int64_t)i * n + j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    }
}

void conv2d_fwd(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                const float* x, const float* w, const float* bias, float* y) {
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
    for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Cout; ++oc) {
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    float acc = bias ? bias[oc] : 0.f;
                    for (int ic = 0; ic < Cin; ++ic) {
                        for (int ky = 0; ky < K; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < K; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                acc += x[(((int64_t)b * Cin + ic) * H + iy) * W + ix] *
                                       w[(((int64_t)oc * Cin + ic) * K + ky) * K + kx];
                            }
                        }
                    }
                    y[(((int64_t)b * Cout + oc) * OH + oy) * OW + ox] = acc;
                }
            }
        }
    }
}

static void coord(int in, int out, int o, int& i0, int& i1, float& w1) {
    if (out == 1) {
        const float pos = (float)(in - 1) * 0.5f;
        i0 = (int)pos;
        i1 = std::min(i0 + 1, in - 1);
        w1 = pos - (float)i0;
        return;
    }
    const float pos = (float)(in - 1) / (float)(out - 1) * (float)o;
    i0 = std::clamp((int)pos, 0, std::max(in - 2, 0));
    i1 = std::min(i0 + 1, in - 1);
    w1 = pos - (float)i0;
}

void bilinear_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y) {
    for (int p = 0; p < planes; ++p) {
        for (int oy = 0; oy < oh; ++oy) {
            int y0, y1;
            float wy;
            coord(H, oh, oy, y0, y1, wy);
            for (int ox = 0; ox < ow; ++ox) {
                int x0, x1;
                float wx;
                coord(W, ow, ox, x0, x1, wx);
                const auto v = [&](int yy, int xx) { return x[((int64_t)p * H + yy) * W + xx]; };
                y[((int64_t)p * oh + oy) * ow + ox] =
                    v(y0, x0) * (1.f - wy) * (1.f - wx) + v(y0, x1) * (1.f - wy) * wx +
                    v(y1, x0) * wy * (1.f - wx) + v(y1, x1) * wy * wx;
            }
        }
    }
}

void area_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y) {
    const double sy = (double)H / oh;
    const double sx = (double)W / ow;
    for (int p = 0; p < planes; ++p) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double ty0 = oy * sy, ty1 = (oy + 1) * sy;
                const double tx0 = ox * sx, tx1 = (ox + 1) * sx;
                double acc = 0.0;
                for (int iy = (int)ty0; iy < std::min((int)std::ceil(ty1), H); ++iy) {
                    const double hy = std::min<double>(iy + 1, ty1) - std::max<double>(iy, ty0);
                    for (int ix = (int)tx0; ix < std::min((int)std::ceil(tx1), W); ++ix) {
                        const double hx = std::min<double>(ix + 1, tx1) - std::max<double>(ix, tx0);
                        acc += hy * hx * (double)x[((int64_t)p * H + iy) * W + ix];
                    }
                }
                y[((int64_t)p * oh + oy) * ow + ox] = (float)(acc / (sy * sx));
            }
        }
    }
}

}  // namespace df::kern::serial
