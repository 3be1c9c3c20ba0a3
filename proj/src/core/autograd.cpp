#include "core/autograd.hpp"

#include <cmath>
#include <cstring>

#include "core/kernels.hpp"

namespace df::ag {

Var make_var(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

Tensor& grad_of(const Var& v) {
    if (!v->grad.defined()) v->grad = Tensor(v->val.shape());
    return v->grad;
}

Tape*& Tape::current() {
    static thread_local Tape* t = nullptr;
    return t;
}

void Tape::backward(const Var& root) {
    if (root->val.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    grad_of(root)[0] = 1.f;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

static bool track(std::initializer_list<const Var*> ins) {
    if (!recording()) return false;
    for (const Var* v : ins)
        if (*v && (*v)->requires_grad) return true;
    return false;
}

static void acc_flat(Tensor& dst, const Tensor& src) {
    float* d = dst.data();
    const float* s = src.data();
    const int64_t n = dst.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

// dst[j] += sum_r src[r, j]
static void acc_colsum(Tensor& dst, const Tensor& src) {
    const int64_t n = dst.numel();
    const int64_t rows = src.numel() / n;
    float* d = dst.data();
    const float* s = src.data();
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < n; ++j) {
        float sum = 0.f;
        for (int64_t r = 0; r < rows; ++r) sum += s[r * n + j];
        d[j] += sum;
    }
}

// ---------------- elementwise ----------------

template <typename FwdFn, typename BwdFn>
static Var binary_op(const Var& a, const Var& b, FwdFn fwd, BwdFn bwd_pair) {
    if (!a->val.same_shape(b->val))
        throw std::invalid_argument("elementwise op: shape mismatch " + shape_str(a->val.shape()) +
                                    " vs " + shape_str(b->val.shape()));
    Tensor out(a->val.shape());
    const int64_t n = out.numel();
    const float* pa = a->val.data();
    const float* pb = b->val.data();
    float* po = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    Var o = make_var(std::move(out));
    if (track({&a, &b})) {
        o->requires_grad = true;
        Tape::current()->record([a, b, o, bwd_pair]() {
            if (!o->grad.defined()) return;
            bwd_pair(a, b, o);
        });
    }
    return o;
}

Var add(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](float x, float y) { return x + y; },
        [](const Var& a, const Var& b, const Var& o) {
            if (a->requires_grad) acc_flat(grad_of(a), o->grad);
            if (b->requires_grad) acc_flat(grad_of(b), o->grad);
        });
}

Var sub(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](float x, float y) { return x - y; },
        [](const Var& a, const Var& b, const Var& o) {
            if (a->requires_grad) acc_flat(grad_of(a), o->grad);
            if (b->requires_grad) {
                Tensor& g = grad_of(b);
                const float* s = o->grad.data();
                float* d = g.data();
                const int64_t n = g.numel();
#pragma omp parallel for schedule(static)
                for (int64_t i = 0; i < n; ++i) d[i] -= s[i];
            }
        });
}

Var mul(const Var& a, const Var& b) {
    return binary_op(
        a, b, [](float x, float y) { return x * y; },
        [](const Var& a, const Var& b, const Var& o) {
            const int64_t n = o->grad.numel();
            const float* g = o->grad.data();
            if (a->requires_grad) {
                float* d = grad_of(a).data();
                const float* pb = b->val.data();
#pragma omp parallel for schedule(static)
                for (int64_t i = 0; i < n; ++i) d[i] += g[i] * pb[i];
            }
            if (b->requires_grad) {
                float* d = grad_of(b).data();
                const float* pa = a->val.data();
#pragma omp parallel for schedule(static)
                for (int64_t i = 0; i < n; ++i) d[i] += g[i] * pa[i];
            }
        });
}

Var affine(const Var& x, float scale, float shift) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    const float* px = x->val.data();
    float* po = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) po[i] = scale * px[i] + shift;
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, scale]() {
            if (!o->grad.defined()) return;
            float* d = grad_of(x).data();
            const float* g = o->grad.data();
            const int64_t n = o->grad.numel();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] += scale * g[i];
        });
    }
    return o;
}

template <typename FwdFn, typename DerivFn>
static Var unary_op(const Var& x, FwdFn fwd, DerivFn deriv_from_x) {
    Tensor out(x->val.shape());
    const int64_t n = out.numel();
    const float* px = x->val.data();
    float* po = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, deriv_from_x]() {
            if (!o->grad.defined()) return;
            float* d = grad_of(x).data();
            const float* g = o->grad.data();
            const float* px = x->val.data();
            const int64_t n = o->grad.numel();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] += g[i] * deriv_from_x(px[i]);
        });
    }
    return o;
}

Var gelu(const Var& x) {
    Tensor out(x->val.shape());
    kern::gelu_fwd(out.numel(), x->val.data(), out.data());
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o]() {
            if (!o->grad.defined()) return;
            kern::gelu_bwd(o->grad.numel(), x->val.data(), o->grad.data(), grad_of(x).data());
        });
    }
    return o;
}

Var tanh_act(const Var& x) {
    return unary_op(
        x, [](float v) { return std::tanh(v); },
        [](float v) {
            const float t = std::tanh(v);
            return 1.f - t * t;
        });
}

Var relu(const Var& x) {
    return unary_op(
        x, [](float v) { return v > 0.f ? v : 0.f; },
        [](float v) { return v > 0.f ? 1.f : 0.f; });
}

Var leaky_relu(const Var& x, float slope) {
    return unary_op(
        x, [slope](float v) { return v > 0.f ? v : slope * v; },
        [slope](float v) { return v > 0.f ? 1.f : slope; });
}

// ---------------- shape ----------------

Var reshape(const Var& x, std::vector<int> shape) {
    Var o = make_var(x->val.reshape(std::move(shape)));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o]() {
            if (!o->grad.defined()) return;
            acc_flat(grad_of(x), o->grad);
        });
    }
    return o;
}

static std::vector<int> permuted_shape(const std::vector<int>& s, const std::vector<int>& p) {
    std::vector<int> r(4);
    for (int i = 0; i < 4; ++i) r[i] = s[p[i]];
    return r;
}

static void permute4_copy(const std::vector<int>& in_shape, const std::vector<int>& perm,
                          const float* src, float* dst) {
    const int d0 = in_shape[0], d1 = in_shape[1], d2 = in_shape[2], d3 = in_shape[3];
    const int64_t is[4] = {(int64_t)d1 * d2 * d3, (int64_t)d2 * d3, (int64_t)d3, 1};
    const std::vector<int> os = permuted_shape(in_shape, perm);
    const int64_t ost[4] = {(int64_t)os[1] * os[2] * os[3], (int64_t)os[2] * os[3], (int64_t)os[3], 1};
    // input axis perm[o] lands at output position o
    int64_t in_axis_out_stride[4];
    for (int o = 0; o < 4; ++o) in_axis_out_stride[perm[o]] = ost[o];
#pragma omp parallel for schedule(static) collapse(2)
    for (int i0 = 0; i0 < d0; ++i0) {
        for (int i1 = 0; i1 < d1; ++i1) {
            for (int i2 = 0; i2 < d2; ++i2) {
                for (int i3 = 0; i3 < d3; ++i3) {
                    const int64_t si = i0 * is[0] + i1 * is[1] + i2 * is[2] + i3;
                    const int64_t di = i0 * in_axis_out_stride[0] + i1 * in_axis_out_stride[1] +
                                       i2 * in_axis_out_stride[2] + i3 * in_axis_out_stride[3];
                    dst[di] = src[si];
                }
            }
        }
    }
}

Var permute4(const Var& x, const std::vector<int>& perm) {
    if (x->val.ndim() != 4 || perm.size() != 4)
        throw std::invalid_argument("permute4: rank-4 only");
    Tensor out(permuted_shape(x->val.shape(), perm));
    permute4_copy(x->val.shape(), perm, x->val.data(), out.data());
    Var o = make_var(std::move(out));
    if (track({&x})) {
        std::vector<int> inv(4);
        for (int i = 0; i < 4; ++i) inv[perm[i]] = i;
        o->requires_grad = true;
        Tape::current()->record([x, o, inv]() {
            if (!o->grad.defined()) return;
            Tensor tmp(x->val.shape());
            permute4_copy(o->grad.shape(), inv, o->grad.data(), tmp.data());
            acc_flat(grad_of(x), tmp);
        });
    }
    return o;
}

Var slice_dim1(const Var& x, int t0, int t1) {
    const auto& s = x->val.shape();
    if (s.size() != 3 || t0 < 0 || t1 > s[1] || t0 >= t1)
        throw std::out_of_range("slice_dim1: bad range [" + std::to_string(t0) + "," +
                                std::to_string(t1) + ") for " + shape_str(s));
    const int B = s[0], T = s[1], D = s[2], L = t1 - t0;
    Tensor out({B, L, D});
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b)
        std::memcpy(out.data() + (int64_t)b * L * D,
                    x->val.data() + ((int64_t)b * T + t0) * D, sizeof(float) * L * D);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, t0, B, T, D, L]() {
            if (!o->grad.defined()) return;
            Tensor& gx = grad_of(x);
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b) {
                float* d = gx.data() + ((int64_t)b * T + t0) * D;
                const float* g = o->grad.data() + (int64_t)b * L * D;
                for (int64_t i = 0; i < (int64_t)L * D; ++i) d[i] += g[i];
            }
        });
    }
    return o;
}

Var slice_rows2(const Var& x, int t0, int t1) {
    const auto& s = x->val.shape();
    if (s.size() != 2 || t0 < 0 || t1 > s[0] || t0 >= t1)
        throw std::out_of_range("slice_rows2: bad range");
    auto x3 = reshape(x, {1, s[0], s[1]});
    auto sl = slice_dim1(x3, t0, t1);
    return reshape(sl, {t1 - t0, s[1]});
}

Var concat_dim0(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_dim0: empty");
    int64_t inner = xs[0]->val.numel() / xs[0]->val.dim(0);
    int total = 0;
    for (const auto& v : xs) {
        if (v->val.numel() / v->val.dim(0) != inner)
            throw std::invalid_argument("concat_dim0: inner shape mismatch");
        total += v->val.dim(0);
    }
    std::vector<int> shape = xs[0]->val.shape();
    shape[0] = total;
    Tensor out(shape);
    int64_t off = 0;
    for (const auto& v : xs) {
        std::memcpy(out.data() + off, v->val.data(), sizeof(float) * v->val.numel());
        off += v->val.numel();
    }
    Var o = make_var(std::move(out));
    bool any = false;
    for (const auto& v : xs) any = any || v->requires_grad;
    if (recording() && any) {
        o->requires_grad = true;
        Tape::current()->record([xs, o]() {
            if (!o->grad.defined()) return;
            int64_t off = 0;
            for (const auto& v : xs) {
                const int64_t n = v->val.numel();
                if (v->requires_grad) {
                    float* d = grad_of(v).data();
                    const float* g = o->grad.data() + off;
#pragma omp parallel for schedule(static)
                    for (int64_t i = 0; i < n; ++i) d[i] += g[i];
                }
                off += n;
            }
        });
    }
    return o;
}

Var concat_dim1(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_dim1: empty");
    const int B = xs[0]->val.dim(0), D = xs[0]->val.dim(2);
    int T = 0;
    for (const auto& v : xs) {
        if (v->val.ndim() != 3 || v->val.dim(0) != B || v->val.dim(2) != D)
            throw std::invalid_argument("concat_dim1: shape mismatch");
        T += v->val.dim(1);
    }
    Tensor out({B, T, D});
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        int64_t off = 0;
        for (const auto& v : xs) {
            const int Tv = v->val.dim(1);
            std::memcpy(out.data() + ((int64_t)b * T + off) * D,
                        v->val.data() + (int64_t)b * Tv * D, sizeof(float) * Tv * D);
            off += Tv;
        }
    }
    Var o = make_var(std::move(out));
    bool any = false;
    for (const auto& v : xs) any = any || v->requires_grad;
    if (recording() && any) {
        o->requires_grad = true;
        Tape::current()->record([xs, o, B, T, D]() {
            if (!o->grad.defined()) return;
            int64_t off = 0;
            for (const auto& v : xs) {
                const int Tv = v->val.dim(1);
                if (v->requires_grad) {
                    Tensor& gx = grad_of(v);
#pragma omp parallel for schedule(static)
                    for (int b = 0; b < B; ++b) {
                        float* d = gx.data() + (int64_t)b * Tv * D;
                        const float* g = o->grad.data() + ((int64_t)b * T + off) * D;
                        for (int64_t i = 0; i < (int64_t)Tv * D; ++i) d[i] += g[i];
                    }
                }
                off += Tv;
            }
        });
    }
    return o;
}

Var gather_batch(const Var& x, const std::vector<int>& idx) {
    const int B = x->val.dim(0);
    const int64_t inner = x->val.numel() / B;
    for (int i : idx)
        if (i < 0 || i >= B) throw std::out_of_range("gather_batch: index out of range");
    std::vector<int> shape = x->val.shape();
    shape[0] = (int)idx.size();
    Tensor out(shape);
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < (int64_t)idx.size(); ++o)
        std::memcpy(out.data() + o * inner, x->val.data() + (int64_t)idx[o] * inner,
                    sizeof(float) * inner);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, idx, inner]() {
            if (!o->grad.defined()) return;
            Tensor& gx = grad_of(x);
            for (size_t r = 0; r < idx.size(); ++r) {  // serial: indices may repeat
                float* d = gx.data() + (int64_t)idx[r] * inner;
                const float* g = o->grad.data() + (int64_t)r * inner;
                for (int64_t i = 0; i < inner; ++i) d[i] += g[i];
            }
        });
    }
    return o;
}

Var gather_rows(const Var& x, const std::vector<int>& rows) {
    const auto& s = x->val.shape();
    if (s.size() != 3) throw std::invalid_argument("gather_rows: rank-3 only");
    const int B = s[0], T = s[1], D = s[2], R = (int)rows.size();
    for (int r : rows)
        if (r < 0 || r >= T) throw std::out_of_range("gather_rows: row out of range");
    Tensor out({B, R, D});
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b)
        for (int r = 0; r < R; ++r)
            std::memcpy(out.data() + ((int64_t)b * R + r) * D,
                        x->val.data() + ((int64_t)b * T + rows[r]) * D, sizeof(float) * D);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, rows, B, T, D, R]() {
            if (!o->grad.defined()) return;
            Tensor& gx = grad_of(x);
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b) {
                for (int r = 0; r < R; ++r) {
                    float* d = gx.data() + ((int64_t)b * T + rows[r]) * D;
                    const float* g = o->grad.data() + ((int64_t)b * R + r) * D;
                    for (int i = 0; i < D; ++i) d[i] += g[i];
                }
            }
        });
    }
    return o;
}

Var tile_batch(const Var& x, int batch) {
    const auto& s = x->val.shape();
    if (s.size() != 2) throw std::invalid_argument("tile_batch: rank-2 only");
    Tensor out({batch, s[0], s[1]});
    const int64_t inner = x->val.numel();
#pragma omp parallel for schedule(static)
    for (int b = 0; b < batch; ++b)
        std::memcpy(out.data() + (int64_t)b * inner, x->val.data(), sizeof(float) * inner);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, batch, inner]() {
            if (!o->grad.defined()) return;
            Tensor& gx = grad_of(x);
            float* d = gx.data();
            const float* g = o->grad.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < inner; ++i) {
                float sum = 0.f;
                for (int b = 0; b < batch; ++b) sum += g[(int64_t)b * inner + i];
                d[i] += sum;
            }
        });
    }
    return o;
}

Var tile_rows(const Var& x, int rows) {
    const auto& s = x->val.shape();
    if (s.size() != 2 || s[0] != 1) throw std::invalid_argument("tile_rows: expects [1,D]");
    const int D = s[1];
    Tensor out({rows, D});
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r)
        std::memcpy(out.data() + (int64_t)r * D, x->val.data(), sizeof(float) * D);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o]() {
            if (!o->grad.defined()) return;
            acc_colsum(grad_of(x), o->grad);
        });
    }
    return o;
}

static Var add_tail_broadcast_impl(const Var& x, const Var& tv, const Tensor& tt) {
    const Tensor& t = tv ? tv->val : tt;
    const int64_t tn = t.numel();
    if (tn == 0 || x->val.numel() % tn != 0)
        throw std::invalid_argument("add_tail_broadcast: sizes incompatible");
    const int64_t rows = x->val.numel() / tn;
    Tensor out(x->val.shape());
    const float* px = x->val.data();
    const float* pt = t.data();
    float* po = out.data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < tn; ++j) po[r * tn + j] = px[r * tn + j] + pt[j];
    Var o = make_var(std::move(out));
    const Var tnull;
    if (track({&x, tv ? &tv : &tnull})) {
        o->requires_grad = true;
        Tape::current()->record([x, tv, o]() {
            if (!o->grad.defined()) return;
            if (x->requires_grad) acc_flat(grad_of(x), o->grad);
            if (tv && tv->requires_grad) acc_colsum(grad_of(tv), o->grad);
        });
    }
    return o;
}

Var add_tail_broadcast(const Var& x, const Var& t) { return add_tail_broadcast_impl(x, t, Tensor()); }
Var add_tail_broadcast(const Var& x, const Tensor& t) { return add_tail_broadcast_impl(x, nullptr, t); }

// ---------------- linear algebra ----------------

Var linear(const Var& x, const Var& w, const Var& b) {
    const int K = x->val.dim(-1);
    if (w->val.ndim() != 2 || w->val.dim(0) != K)
        throw std::invalid_argument("linear: weight shape mismatch");
    const int N = w->val.dim(1);
    const int64_t rows = x->val.numel() / K;
    std::vector<int> oshape = x->val.shape();
    oshape.back() = N;
    Tensor out(oshape);
    kern::gemm_nn((int)rows, K, N, x->val.data(), w->val.data(), out.data());
    if (b) {
        if (b->val.numel() != N) throw std::invalid_argument("linear: bias shape mismatch");
        float* po = out.data();
        const float* pb = b->val.data();
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < N; ++j) po[r * N + j] += pb[j];
    }
    Var o = make_var(std::move(out));
    const Var bnull;
    if (track({&x, &w, b ? &b : &bnull})) {
        o->requires_grad = true;
        Tape::current()->record([x, w, b, o, rows, K, N]() {
            if (!o->grad.defined()) return;
            const float* g = o->grad.data();
            if (x->requires_grad) {
                Tensor wT({N, K});
                kern::transpose2d(K, N, w->val.data(), wT.data());
                kern::gemm_nn((int)rows, N, K, g, wT.data(), grad_of(x).data(), true);
            }
            if (w->requires_grad) {
                Tensor xT({K, (int)rows});
                kern::transpose2d((int)rows, K, x->val.data(), xT.data());
                kern::gemm_nn(K, (int)rows, N, xT.data(), g, grad_of(w).data(), true);
            }
            if (b && b->requires_grad) acc_colsum(grad_of(b), o->grad);
        });
    }
    return o;
}

static void check_bmm(const Var& a, const Var& b) {
    if (a->val.ndim() != 3 || b->val.ndim() != 3 || a->val.dim(0) != b->val.dim(0))
        throw std::invalid_argument("bmm: rank/batch mismatch");
}

Var bmm(const Var& a, const Var& b) {
    check_bmm(a, b);
    const int G = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2), n = b->val.dim(2);
    if (b->val.dim(1) != k) throw std::invalid_argument("bmm: inner dim mismatch");
    Tensor out({G, m, n});
    kern::bmm_nn(G, m, k, n, a->val.data(), b->val.data(), out.data());
    Var o = make_var(std::move(out));
    if (track({&a, &b})) {
        o->requires_grad = true;
        Tape::current()->record([a, b, o, G, m, k, n]() {
            if (!o->grad.defined()) return;
            const float* g = o->grad.data();
            if (a->requires_grad) {
                Tensor bT({G, n, k});
#pragma omp parallel for schedule(static)
                for (int gi = 0; gi < G; ++gi)
                    kern::serial::transpose2d(k, n, b->val.data() + (int64_t)gi * k * n,
                                              bT.data() + (int64_t)gi * n * k);
                kern::bmm_nn(G, m, n, k, g, bT.data(), grad_of(a).data(), true);
            }
            if (b->requires_grad) {
                Tensor aT({G, k, m});
#pragma omp parallel for schedule(static)
                for (int gi = 0; gi < G; ++gi)
                    kern::serial::transpose2d(m, k, a->val.data() + (int64_t)gi * m * k,
                                              aT.data() + (int64_t)gi * k * m);
                kern::bmm_nn(G, k, m, n, aT.data(), g, grad_of(b).data(), true);
            }
        });
    }
    return o;
}

Var bmm_nt(const Var& a, const Var& b) {
    check_bmm(a, b);
    const int G = a->val.dim(0), m = a->val.dim(1), k = a->val.dim(2), n = b->val.dim(1);
    if (b->val.dim(2) != k) throw std::invalid_argument("bmm_nt: inner dim mismatch");
    Tensor bT({G, k, n});
#pragma omp parallel for schedule(static)
    for (int gi = 0; gi < G; ++gi)
        kern::serial::transpose2d(n, k, b->val.data() + (int64_t)gi * n * k,
                                  bT.data() + (int64_t)gi * k * n);
    Tensor out({G, m, n});
    kern::bmm_nn(G, m, k, n, a->val.data(), bT.data(), out.data());
    Var o = make_var(std::move(out));
    if (track({&a, &b})) {
        o->requires_grad = true;
        Tape::current()->record([a, b, o, G, m, k, n]() {
            if (!o->grad.defined()) return;
            const float* g = o->grad.data();
            // da += g * b ; db += g^T * a
            if (a->requires_grad) kern::bmm_nn(G, m, n, k, g, b->val.data(), grad_of(a).data(), true);
            if (b->requires_grad) {
                Tensor gT({G, n, m});
#pragma omp parallel for schedule(static)
                for (int gi = 0; gi < G; ++gi)
                    kern::serial::transpose2d(m, n, g + (int64_t)gi * m * n,
                                              gT.data() + (int64_t)gi * n * m);
                kern::bmm_nn(G, n, m, k, gT.data(), a->val.data(), grad_of(b).data(), true);
            }
        });
    }
    return o;
}

Var softmax_lastdim(const Var& x) {
    const int n = x->val.dim(-1);
    const int64_t rows = x->val.numel() / n;
    Tensor out(x->val.shape());
    kern::softmax_rows((int)rows, n, x->val.data(), out.data());
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, rows, n]() {
            if (!o->grad.defined()) return;
            kern::softmax_rows_bwd((int)rows, n, o->val.data(), o->grad.data(), grad_of(x).data());
        });
    }
    return o;
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta) {
    const int n = x->val.dim(-1);
    if (gamma->val.numel() != n || beta->val.numel() != n)
        throw std::invalid_argument("layernorm: affine shape mismatch");
    const int64_t rows = x->val.numel() / n;
    Tensor out(x->val.shape());
    auto mean = std::make_shared<Tensor>(Tensor({(int)rows}));
    auto rstd = std::make_shared<Tensor>(Tensor({(int)rows}));
    kern::layernorm_fwd((int)rows, n, x->val.data(), gamma->val.data(), beta->val.data(),
                        out.data(), mean->data(), rstd->data());
    Var o = make_var(std::move(out));
    if (track({&x, &gamma, &beta})) {
        o->requires_grad = true;
        Tape::current()->record([x, gamma, beta, o, mean, rstd, rows, n]() {
            if (!o->grad.defined()) return;
            Tensor dg({n}), db({n});
            Tensor dx_dummy;
            Tensor& dx = x->requires_grad ? grad_of(x) : dx_dummy;
            if (!dx.defined()) dx = Tensor(x->val.shape());
            kern::layernorm_bwd((int)rows, n, x->val.data(), gamma->val.data(), mean->data(),
                                rstd->data(), o->grad.data(), dx.data(), dg.data(), db.data());
            if (gamma->requires_grad) acc_flat(grad_of(gamma), dg);
            if (beta->requires_grad) acc_flat(grad_of(beta), db);
        });
    }
    return o;
}

// ---------------- lookup / routing ----------------

Var embedding(const Var& table, const ITensor& idx) {
    if (table->val.ndim() != 2) throw std::invalid_argument("embedding: table must be [K,D]");
    const int K = table->val.dim(0), D = table->val.dim(1);
    const int64_t n = idx.numel();
    for (int64_t i = 0; i < n; ++i)
        if (idx[i] < 0 || idx[i] >= K)
            throw std::out_of_range("embedding: index " + std::to_string(idx[i]) +
                                    " out of range [0," + std::to_string(K) + ")");
    std::vector<int> oshape = idx.shape();
    oshape.push_back(D);
    Tensor out(oshape);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        std::memcpy(out.data() + i * D, table->val.data() + (int64_t)idx[i] * D, sizeof(float) * D);
    Var o = make_var(std::move(out));
    if (track({&table})) {
        o->requires_grad = true;
        Tape::current()->record([table, o, idx, n, D]() {
            if (!o->grad.defined()) return;
            Tensor& g = grad_of(table);
            for (int64_t i = 0; i < n; ++i) {  // serial scatter: duplicates expected
                float* d = g.data() + (int64_t)idx[i] * D;
                const float* s = o->grad.data() + i * D;
                for (int j = 0; j < D; ++j) d[j] += s[j];
            }
        });
    }
    return o;
}

Var straight_through(const Var& x, const Tensor& quantized) {
    if (!x->val.same_shape(quantized))
        throw std::invalid_argument("straight_through: shape mismatch");
    Var o = make_var(quantized.clone());
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o]() {
            if (!o->grad.defined()) return;
            acc_flat(grad_of(x), o->grad);
        });
    }
    return o;
}

Var detach(const Var& x) { return make_var(x->val, false); }

// ---------------- conv / image ----------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const int B = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    const int Co = w->val.dim(0), K = w->val.dim(2);
    if (w->val.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
    Tensor out({B, Co, OH, OW});
    kern::conv2d_fwd(B, C, H, W, Co, K, stride, pad, x->val.data(), w->val.data(),
                     b ? b->val.data() : nullptr, out.data());
    Var o = make_var(std::move(out));
    const Var bnull;
    if (track({&x, &w, b ? &b : &bnull})) {
        o->requires_grad = true;
        Tape::current()->record([x, w, b, o, B, C, H, W, Co, K, stride, pad]() {
            if (!o->grad.defined()) return;
            if (x->requires_grad)
                kern::conv2d_bwd_input(B, C, H, W, Co, K, stride, pad, w->val.data(),
                                       o->grad.data(), grad_of(x).data());
            if (w->requires_grad)
                kern::conv2d_bwd_weight(B, C, H, W, Co, K, stride, pad, x->val.data(),
                                        o->grad.data(), grad_of(w).data(),
                                        (b && b->requires_grad) ? grad_of(b).data() : nullptr);
        });
    }
    return o;
}

Var global_avg_pool(const Var& x) {
    const int B = x->val.dim(0), C = x->val.dim(1);
    const int64_t hw = (int64_t)x->val.dim(2) * x->val.dim(3);
    Tensor out({B, C});
    const float* px = x->val.data();
    float* po = out.data();
#pragma omp parallel for schedule(static) collapse(2)
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            float sum = 0.f;
            const float* p = px + ((int64_t)b * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) sum += p[i];
            po[b * C + c] = sum / (float)hw;
        }
    }
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, B, C, hw]() {
            if (!o->grad.defined()) return;
            Tensor& gx = grad_of(x);
            const float inv = 1.f / (float)hw;
#pragma omp parallel for schedule(static) collapse(2)
            for (int b = 0; b < B; ++b) {
                for (int c = 0; c < C; ++c) {
                    const float g = o->grad.data()[b * C + c] * inv;
                    float* d = gx.data() + ((int64_t)b * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) d[i] += g;
                }
            }
        });
    }
    return o;
}

Var bilinear_resize2d(const Var& x, int oh, int ow) {
    if (x->val.ndim() != 3) throw std::invalid_argument("bilinear_resize2d: expects [C,H,W]");
    const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
    Tensor out({C, oh, ow});
    kern::bilinear_resize(C, H, W, oh, ow, x->val.data(), out.data());
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, C, H, W, oh, ow]() {
            if (!o->grad.defined()) return;
            kern::bilinear_resize_bwd(C, H, W, oh, ow, o->grad.data(), grad_of(x).data());
        });
    }
    return o;
}

// Patch vector layout: (channel, dy, dx), patches in row-major grid order.
static void patchify_copy(int B, int C, int H, int W, int f, const float* img, float* out,
                          bool forward) {
    const int gh = H / f, gw = W / f;
    const int pv = C * f * f;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                const int64_t pbase = (((int64_t)b * gh * gw) + py * gw + px) * pv;
                for (int c = 0; c < C; ++c)
                    for (int dy = 0; dy < f; ++dy)
                        for (int dx = 0; dx < f; ++dx) {
                            const int64_t ii =
                                (((int64_t)b * C + c) * H + py * f + dy) * W + px * f + dx;
                            const int64_t oi = pbase + (c * f + dy) * f + dx;
                            if (forward)
                                out[oi] = img[ii];
                            else
                                out[ii] = img[oi];  // img=patches, out=image
                        }
            }
    }
}

Var patchify(const Var& img, int f) {
    const int B = img->val.dim(0), C = img->val.dim(1), H = img->val.dim(2), W = img->val.dim(3);
    if (H % f != 0 || W % f != 0)
        throw std::invalid_argument("patchify: resolution not a multiple of patch size");
    Tensor out({B, (H / f) * (W / f), C * f * f});
    patchify_copy(B, C, H, W, f, img->val.data(), out.data(), true);
    Var o = make_var(std::move(out));
    if (track({&img})) {
        o->requires_grad = true;
        Tape::current()->record([img, o, B, C, H, W, f]() {
            if (!o->grad.defined()) return;
            Tensor tmp({B, C, H, W});
            patchify_copy(B, C, H, W, f, o->grad.data(), tmp.data(), false);
            acc_flat(grad_of(img), tmp);
        });
    }
    return o;
}

Var unpatchify(const Var& x, int f, int channels, int res) {
    const int B = x->val.dim(0);
    const int gh = res / f;
    if (x->val.dim(1) != gh * gh || x->val.dim(2) != channels * f * f)
        throw std::invalid_argument("unpatchify: shape mismatch");
    Tensor out({B, channels, res, res});
    patchify_copy(B, channels, res, res, f, x->val.data(), out.data(), false);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, B, channels, res, f]() {
            if (!o->grad.defined()) return;
            Tensor tmp(x->val.shape());
            patchify_copy(B, channels, res, res, f, o->grad.data(), tmp.data(), true);
            acc_flat(grad_of(x), tmp);
        });
    }
    return o;
}

// ---------------- reductions / losses ----------------

Var mean_all(const Var& x) {
    const int64_t n = x->val.numel();
    double sum = 0.0;
    const float* p = x->val.data();
    for (int64_t i = 0; i < n; ++i) sum += p[i];
    Tensor out({1});
    out[0] = (float)(sum / (double)n);
    Var o = make_var(std::move(out));
    if (track({&x})) {
        o->requires_grad = true;
        Tape::current()->record([x, o, n]() {
            if (!o->grad.defined()) return;
            const float g = o->grad[0] / (float)n;
            float* d = grad_of(x).data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] += g;
        });
    }
    return o;
}

Var sum_all(const Var& x) { return affine(mean_all(x), (float)x->val.numel()); }

Var mse_loss(const Var& pred, const Tensor& target) {
    if (!pred->val.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
    const int64_t n = pred->val.numel();
    const float* pp = pred->val.data();
    const float* pt = target.data();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = (double)pp[i] - (double)pt[i];
        sum += d * d;
    }
    Tensor out({1});
    out[0] = (float)(sum / (double)n);
    Var o = make_var(std::move(out));
    if (track({&pred})) {
        o->requires_grad = true;
        Tape::current()->record([pred, target, o, n]() {
            if (!o->grad.defined()) return;
            const float g = o->grad[0] * 2.f / (float)n;
            float* d = grad_of(pred).data();
            const float* pp = pred->val.data();
            const float* pt = target.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) d[i] += g * (pp[i] - pt[i]);
        });
    }
    return o;
}

Var mse_loss(const Var& pred, const Var& target) {
    auto diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

Var l1_loss(const Var& pred, const Tensor& target) {
    if (!pred->val.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
    const int64_t n = pred->val.numel();
    const float* pp = pred->val.data();
    const float* pt = target.data();
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += std::abs((double)pp[i] - (double)pt[i]);
    Tensor out({1});
    out[0] = (float)(sum / (double)n);
    Var o = make_var(std::move(out));
    if (track({&pred})) {
        o->requires_grad = true;
        Tape::current()->record([pred, target, o, n]() {
            if (!o->grad.defined()) return;
            const float g = o->grad[0] / (float)n;
            float* d = grad_of(pred).data();
            const float* pp = pred->val.data();
            const float* pt = target.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                const float diff = pp[i] - pt[i];
                d[i] += g * (diff > 0.f ? 1.f : (diff < 0.f ? -1.f : 0.f));
            }
        });
    }
    return o;
}

Var neg_cosine_rows(const Var& a, const Tensor& t, int* degenerate_rows) {
    if (!a->val.same_shape(t)) throw std::invalid_argument("neg_cosine_rows: shape mismatch");
    const int B = a->val.dim(0), D = a->val.dim(1);
    auto na = std::make_shared<std::vector<double>>(B);
    auto nt = std::make_shared<std::vector<double>>(B);
    auto dot = std::make_shared<std::vector<double>>(B);
    double loss = 0.0;
    int degenerate = 0;
    for (int b = 0; b < B; ++b) {
        const float* pa = a->val.data() + (int64_t)b * D;
        const float* pt = t.data() + (int64_t)b * D;
        double sa = 0, st = 0, sd = 0;
        for (int j = 0; j < D; ++j) {
            sa += (double)pa[j] * pa[j];
            st += (double)pt[j] * pt[j];
            sd += (double)pa[j] * pt[j];
        }
        (*na)[b] = std::sqrt(sa);
        (*nt)[b] = std::sqrt(st);
        (*dot)[b] = sd;
        if ((*na)[b] < 1e-20 || (*nt)[b] < 1e-20) {
            ++degenerate;  // degenerate cosine contributes 0
        } else {
            loss -= sd / ((*na)[b] * (*nt)[b]);
        }
    }
    if (degenerate_rows) *degenerate_rows = degenerate;
    Tensor out({1});
    out[0] = (float)(loss / (double)B);
    Var o = make_var(std::move(out));
    if (track({&a})) {
        o->requires_grad = true;
        Tape::current()->record([a, t, o, na, nt, dot, B, D]() {
            if (!o->grad.defined()) return;
            const float g = o->grad[0] / (float)B;
            Tensor& ga = grad_of(a);
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b) {
                if ((*na)[b] < 1e-20 || (*nt)[b] < 1e-20) continue;
                const double inv = 1.0 / ((*na)[b] * (*nt)[b]);
                const double cos_b = (*dot)[b] * inv;
                const float* pa = a->val.data() + (int64_t)b * D;
                const float* pt = t.data() + (int64_t)b * D;
                float* d = ga.data() + (int64_t)b * D;
                const double inv_na2 = 1.0 / ((*na)[b] * (*na)[b]);
                for (int j = 0; j < D; ++j)
                    d[j] += g * (float)(-(pt[j] * inv) + cos_b * pa[j] * inv_na2);
            }
        });
    }
    return o;
}

Var cross_entropy_masked(const Var& logits, const ITensor& targets, const Tensor& mask) {
    const int K = logits->val.dim(-1);
    const int64_t rows = logits->val.numel() / K;
    if (targets.numel() != rows || mask.numel() != rows)
        throw std::invalid_argument("cross_entropy: target/mask size mismatch");
    int64_t count = 0;
    for (int64_t r = 0; r < rows; ++r)
        if (mask[r] != 0.f) ++count;
    if (count == 0) throw std::invalid_argument("cross_entropy: all-zero loss mask");
    for (int64_t r = 0; r < rows; ++r)
        if (targets[r] < 0 || targets[r] >= K) throw std::out_of_range("cross_entropy: target index");
    auto probs = std::make_shared<Tensor>(Tensor(logits->val.shape()));
    kern::softmax_rows((int)rows, K, logits->val.data(), probs->data());
    double loss = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (mask[r] == 0.f) continue;
        const float p = std::max((*probs)[r * K + targets[r]], 1e-30f);
        loss -= std::log((double)p);
    }
    Tensor out({1});
    out[0] = (float)(loss / (double)count);
    Var o = make_var(std::move(out));
    if (track({&logits})) {
        o->requires_grad = true;
        Tape::current()->record([logits, targets, mask, o, probs, rows, K, count]() {
            if (!o->grad.defined()) return;
            const float g = o->grad[0] / (float)count;
            Tensor& gl = grad_of(logits);
#pragma omp parallel for schedule(static)
            for (int64_t r = 0; r < rows; ++r) {
                if (mask[r] == 0.f) continue;
                float* d = gl.data() + r * K;
                const float* p = probs->data() + r * K;
                const int tgt = targets[r];
                for (int j = 0; j < K; ++j) d[j] += g * (p[j] - (j == tgt ? 1.f : 0.f));
            }
        });
    }
    return o;
}

Var weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
    Tensor out({1});
    double acc = 0.0;
    for (const auto& [w, v] : terms) {
        if (v->val.numel() != 1) throw std::invalid_argument("weighted_sum: scalar terms only");
        acc += w * (double)v->val[0];
    }
    out[0] = (float)acc;
    Var o = make_var(std::move(out));
    bool any = false;
    for (const auto& [w, v] : terms) any = any || v->requires_grad;
    if (recording() && any) {
        o->requires_grad = true;
        Tape::current()->record([terms, o]() {
            if (!o->grad.defined()) return;
            for (const auto& [w, v] : terms)
                if (v->requires_grad) grad_of(v)[0] += (float)w * o->grad[0];
        });
    }
    return o;
}

}  // namespace df::ag
