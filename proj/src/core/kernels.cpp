#include "core/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace df::kern {

void gemm_nn(int m, int k, int n, const float* A, const float* B, float* C, bool acc) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* c = C + (int64_t)i * n;
        if (!acc) std::memset(c, 0, sizeof(float) * n);
        const float* a = A + (int64_t)i * k;
        for (int p = 0; p < k; ++p) {
            const float ap = a[p];
            const float* b = B + (int64_t)p * n;
            for (int j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

void bmm_nn(int G, int m, int k, int n, const float* A, const float* B, float* C, bool acc) {
#pragma omp parallel for schedule(static) collapse(2)
    for (int g = 0; g < G; ++g) {
        for (int i = 0; i < m; ++i) {
            const float* a = A + ((int64_t)g * m + i) * k;
            const float* Bg = B + (int64_t)g * k * n;
            float* c = C + ((int64_t)g * m + i) * n;
            if (!acc) std::memset(c, 0, sizeof(float) * n);
            for (int p = 0; p < k; ++p) {
                const float ap = a[p];
                const float* b = Bg + (int64_t)p * n;
                for (int j = 0; j < n; ++j) c[j] += ap * b[j];
            }
        }
    }
}

void transpose2d(int m, int n, const float* A, float* AT) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        float* dst = AT + (int64_t)j * m;
        for (int i = 0; i < m; ++i) dst[i] = A[(int64_t)i * n + j];
    }
}

void softmax_rows(int m, int n, const float* x, float* y) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* xr = x + (int64_t)i * n;
        float* yr = y + (int64_t)i * n;
        float mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        float sum = 0.f;
        for (int j = 0; j < n; ++j) {
            const float e = std::exp(xr[j] - mx);
            yr[j] = e;
            sum += e;
        }
        const float inv = 1.f / sum;
        for (int j = 0; j < n; ++j) yr[j] *= inv;
    }
}

void softmax_rows_bwd(int m, int n, const float* y, const float* dy, float* dx) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* yr = y + (int64_t)i * n;
        const float* dyr = dy + (int64_t)i * n;
        float* dxr = dx + (int64_t)i * n;
        float dot = 0.f;
        for (int j = 0; j < n; ++j) dot += dyr[j] * yr[j];
        for (int j = 0; j < n; ++j) dxr[j] += (dyr[j] - dot) * yr[j];
    }
}

void layernorm_fwd(int m, int n, const float* x, const float* gamma, const float* beta,
                   float* y, float* mean, float* rstd) {
    const float eps = 1e-5f;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* xr = x + (int64_t)i * n;
        float* yr = y + (int64_t)i * n;
        float mu = 0.f;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= (float)n;
        float var = 0.f;
        for (int j = 0; j < n; ++j) {
            const float d = xr[j] - mu;
            var += d * d;
        }
        var /= (float)n;
        const float rs = 1.f / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        for (int j = 0; j < n; ++j) yr[j] = (xr[j] - mu) * rs * gamma[j] + beta[j];
    }
}

void layernorm_bwd(int m, int n, const float* x, const float* gamma, const float* mean,
                   const float* rstd, const float* dy, float* dx, float* dgamma, float* dbeta) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* xr = x + (int64_t)i * n;
        const float* dyr = dy + (int64_t)i * n;
        float* dxr = dx + (int64_t)i * n;
        const float mu = mean[i], rs = rstd[i];
        float sum1 = 0.f, sum2 = 0.f;
        for (int j = 0; j < n; ++j) {
            const float xhat = (xr[j] - mu) * rs;
            const float g = dyr[j] * gamma[j];
            sum1 += g;
            sum2 += g * xhat;
        }
        const float inv_n = 1.f / (float)n;
        for (int j = 0; j < n; ++j) {
            const float xhat = (xr[j] - mu) * rs;
            const float g = dyr[j] * gamma[j];
            dxr[j] += (g - inv_n * sum1 - xhat * inv_n * sum2) * rs;
        }
    }
    // Column reductions: parallel over columns, serial over rows.
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        float dg = 0.f, db = 0.f;
        for (int i = 0; i < m; ++i) {
            const float xhat = (x[(int64_t)i * n + j] - mean[i]) * rstd[i];
            dg += dy[(int64_t)i * n + j] * xhat;
            db += dy[(int64_t)i * n + j];
        }
        dgamma[j] += dg;
        dbeta[j] += db;
    }
}

// tanh-approximated GELU
static inline float gelu_scalar(float x) {
    const float c = 0.7978845608028654f;  // sqrt(2/pi)
    const float t = std::tanh(c * (x + 0.044715f * x * x * x));
    return 0.5f * x * (1.f + t);
}

void gelu_fwd(int64_t n, const float* x, float* y) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_bwd(int64_t n, const float* x, const float* dy, float* dx) {
    const float c = 0.7978845608028654f;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const float v = x[i];
        const float u = c * (v + 0.044715f * v * v * v);
        const float t = std::tanh(u);
        const float du = c * (1.f + 3.f * 0.044715f * v * v);
        const float d = 0.5f * (1.f + t) + 0.5f * v * (1.f - t * t) * du;
        dx[i] += dy[i] * d;
    }
}

void conv2d_fwd(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                const float* x, const float* w, const float* bias, float* y) {
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Cout; ++oc) {
            float* yp = y + (((int64_t)b * Cout + oc) * OH) * OW;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    float acc = bias ? bias[oc] : 0.f;
                    for (int ic = 0; ic < Cin; ++ic) {
                        const float* xp = x + (((int64_t)b * Cin + ic) * H) * W;
                        const float* wp = w + (((int64_t)oc * Cin + ic) * K) * K;
                        for (int ky = 0; ky < K; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < K; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                acc += xp[(int64_t)iy * W + ix] * wp[ky * K + kx];
                            }
                        }
                    }
                    yp[(int64_t)oy * OW + ox] = acc;
                }
            }
        }
    }
}

void conv2d_bwd_input(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                      const float* w, const float* dy, float* dx) {
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < B; ++b) {
        for (int ic = 0; ic < Cin; ++ic) {
            float* dxp = dx + (((int64_t)b * Cin + ic) * H) * W;
            for (int iy = 0; iy < H; ++iy) {
                for (int ix = 0; ix < W; ++ix) {
                    float acc = 0.f;
                    for (int oc = 0; oc < Cout; ++oc) {
                        const float* dyp = dy + (((int64_t)b * Cout + oc) * OH) * OW;
                        const float* wp = w + (((int64_t)oc * Cin + ic) * K) * K;
                        for (int ky = 0; ky < K; ++ky) {
                            const int t = iy + pad - ky;
                            if (t < 0 || t % stride != 0) continue;
                            const int oy = t / stride;
                            if (oy >= OH) continue;
                            for (int kx = 0; kx < K; ++kx) {
                                const int s = ix + pad - kx;
                                if (s < 0 || s % stride != 0) continue;
                                const int ox = s / stride;
                                if (ox >= OW) continue;
                                acc += dyp[(int64_t)oy * OW + ox] * wp[ky * K + kx];
                            }
                        }
                    }
                    dxp[(int64_t)iy * W + ix] += acc;
                }
            }
        }
    }
}

void conv2d_bwd_weight(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                       const float* x, const float* dy, float* dw, float* dbias) {
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
#pragma omp parallel for schedule(static) collapse(2)
    for (int oc = 0; oc < Cout; ++oc) {
        for (int ic = 0; ic < Cin; ++ic) {
            float* dwp = dw + (((int64_t)oc * Cin + ic) * K) * K;
            for (int ky = 0; ky < K; ++ky) {
                for (int kx = 0; kx < K; ++kx) {
                    float acc = 0.f;
                    for (int b = 0; b < B; ++b) {
                        const float* xp = x + (((int64_t)b * Cin + ic) * H) * W;
                        const float* dyp = dy + (((int64_t)b * Cout + oc) * OH) * OW;
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int ox = 0; ox < OW; ++ox) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= W) continue;
                                acc += xp[(int64_t)iy * W + ix] * dyp[(int64_t)oy * OW + ox];
                            }
                        }
                    }
                    dwp[ky * K + kx] += acc;
                }
            }
        }
    }
    if (dbias) {
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < Cout; ++oc) {
            float acc = 0.f;
            for (int b = 0; b < B; ++b) {
                const float* dyp = dy + (((int64_t)b * Cout + oc) * OH) * OW;
                for (int64_t i = 0; i < (int64_t)OH * OW; ++i) acc += dyp[i];
            }
            dbias[oc] += acc;
        }
    }
}

// Shared sampling geometry for forward and backward.
static inline void bilinear_coord(int in, int out, int o, int& i0, int& i1, float& w1) {
    if (out == 1) {
        const float pos = (float)(in - 1) * 0.5f;
        i0 = (int)pos;
        i1 = std::min(i0 + 1, in - 1);
        w1 = pos - (float)i0;
        return;
    }
    const float scale = (float)(in - 1) / (float)(out - 1);
    const float pos = scale * (float)o;
    i0 = (int)pos;
    if (i0 > in - 2) i0 = in - 2;
    if (i0 < 0) i0 = 0;
    i1 = std::min(i0 + 1, in - 1);
    w1 = pos - (float)i0;
}

void bilinear_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const float* xp = x + (int64_t)p * H * W;
        float* yp = y + (int64_t)p * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            int y0, y1;
            float wy;
            bilinear_coord(H, oh, oy, y0, y1, wy);
            for (int ox = 0; ox < ow; ++ox) {
                int x0, x1;
                float wx;
                bilinear_coord(W, ow, ox, x0, x1, wx);
                const float v00 = xp[(int64_t)y0 * W + x0];
                const float v01 = xp[(int64_t)y0 * W + x1];
                const float v10 = xp[(int64_t)y1 * W + x0];
                const float v11 = xp[(int64_t)y1 * W + x1];
                yp[(int64_t)oy * ow + ox] =
                    v00 * (1.f - wy) * (1.f - wx) + v01 * (1.f - wy) * wx +
                    v10 * wy * (1.f - wx) + v11 * wy * wx;
            }
        }
    }
}

void bilinear_resize_bwd(int planes, int H, int W, int oh, int ow, const float* dy, float* dx) {
    // Gather per input element so accumulation stays deterministic.
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const float* dyp = dy + (int64_t)p * oh * ow;
        float* dxp = dx + (int64_t)p * H * W;
        for (int oy = 0; oy < oh; ++oy) {
            int y0, y1;
            float wy;
            bilinear_coord(H, oh, oy, y0, y1, wy);
            for (int ox = 0; ox < ow; ++ox) {
                int x0, x1;
                float wx;
                bilinear_coord(W, ow, ox, x0, x1, wx);
                const float g = dyp[(int64_t)oy * ow + ox];
                dxp[(int64_t)y0 * W + x0] += g * (1.f - wy) * (1.f - wx);
                dxp[(int64_t)y0 * W + x1] += g * (1.f - wy) * wx;
                dxp[(int64_t)y1 * W + x0] += g * wy * (1.f - wx);
                dxp[(int64_t)y1 * W + x1] += g * wy * wx;
            }
        }
    }
}

void area_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y) {
    const double sy = (double)H / oh;
    const double sx = (double)W / ow;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
        const float* xp = x + (int64_t)p * H * W;
        float* yp = y + (int64_t)p * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const double ty0 = oy * sy, ty1 = (oy + 1) * sy;
            const int iy0 = (int)ty0, iy1 = std::min((int)std::ceil(ty1), H);
            for (int ox = 0; ox < ow; ++ox) {
                const double tx0 = ox * sx, tx1 = (ox + 1) * sx;
                const int ix0 = (int)tx0, ix1 = std::min((int)std::ceil(tx1), W);
                double acc = 0.0;
                for (int iy = iy0; iy < iy1; ++iy) {
                    const double hy = std::min<double>(iy + 1, ty1) - std::max<double>(iy, ty0);
                    for (int ix = ix0; ix < ix1; ++ix) {
                        const double hx = std::min<double>(ix + 1, tx1) - std::max<double>(ix, tx0);
                        acc += hy * hx * (double)xp[(int64_t)iy * W + ix];
                    }
                }
                yp[(int64_t)oy * ow + ox] = (float)(acc / (sy * sx));
            }
        }
    }
}

}  // namespace df::kern
