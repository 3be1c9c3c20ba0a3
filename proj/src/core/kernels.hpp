#pragma once

#include <cstdint>

// Data-parallel kernels. Every kernel parallelizes over independent output
// elements and keeps the per-element accumulation order fixed, so results are
// bit-identical for any thread count and match the serial reference exactly.
namespace df::kern {

// C[m,n] = A[m,k] * B[k,n]  (+= when acc)
void gemm_nn(int m, int k, int n, const float* A, const float* B, float* C, bool acc = false);

// Batched gemm over G independent problems laid out contiguously.
void bmm_nn(int G, int m, int k, int n, const float* A, const float* B, float* C, bool acc = false);

void transpose2d(int m, int n, const float* A, float* AT);

// y = softmax(x) along rows of an m x n matrix.
void softmax_rows(int m, int n, const float* x, float* y);
// dx += (dy - sum(dy * y)) * y
void softmax_rows_bwd(int m, int n, const float* y, const float* dy, float* dx);

void layernorm_fwd(int m, int n, const float* x, const float* gamma, const float* beta,
                   float* y, float* mean, float* rstd);
void layernorm_bwd(int m, int n, const float* x, const float* gamma, const float* mean,
                   const float* rstd, const float* dy, float* dx, float* dgamma, float* dbeta);

void gelu_fwd(int64_t n, const float* x, float* y);
void gelu_bwd(int64_t n, const float* x, const float* dy, float* dx);

// NCHW direct convolution, square kernel, zero padding.
void conv2d_fwd(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                const float* x, const float* w, const float* bias, float* y);
void conv2d_bwd_input(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                      const float* w, const float* dy, float* dx);
void conv2d_bwd_weight(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                       const float* x, const float* dy, float* dw, float* dbias);

// Per-plane bilinear resize (align-corners; a size-1 output samples the center).
void bilinear_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y);
void bilinear_resize_bwd(int planes, int H, int W, int oh, int ow, const float* dy, float* dx);

// Area-average (box) resample, arbitrary ratio, double accumulation.
void area_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y);

// Serial reference implementations used by the kernel tests and the benchmark.
namespace serial {
void gemm_nn(int m, int k, int n, const float* A, const float* B, float* C, bool acc = false);
void bmm_nn(int G, int m, int k, int n, const float* A, const float* B, float* C, bool acc = false);
void transpose2d(int m, int n, const float* A, float* AT);
void softmax_rows(int m, int n, const float* x, float* y);
void layernorm_fwd(int m, int n, const float* x, const float* gamma, const float* beta,
                   float* y, float* mean, float* rstd);
void conv2d_fwd(int B, int Cin, int H, int W, int Cout, int K, int stride, int pad,
                const float* x, const float* w, const float* bias, float* y);
void bilinear_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y);
void area_resize(int planes, int H, int W, int oh, int ow, const float* x, float* y);
}  // namespace serial

}  // namespace df::kern
