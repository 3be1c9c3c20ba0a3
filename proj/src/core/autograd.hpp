#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

// Tape-based reverse-mode autodiff over df::Tensor. Ops append their backward
// closure to the active tape in execution order; backward() replays in
// reverse. Gradients accumulate (+=) into lazily allocated buffers.
namespace df::ag {

struct Node {
    Tensor val;
    Tensor grad;  // undefined until first accumulation
    bool requires_grad = false;
};

using Var = std::shared_ptr<Node>;

Var make_var(Tensor v, bool requires_grad = false);
inline Var constant(Tensor v) { return make_var(std::move(v), false); }

// Allocates (zeroed) grad storage if missing, returns it.
Tensor& grad_of(const Var& v);

class Tape {
public:
    static Tape*& current();

    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
    void backward(const Var& root);
    void clear() { steps_.clear(); }
    size_t size() const { return steps_.size(); }

    // RAII: makes this tape the active one.
    class Use {
    public:
        explicit Use(Tape& t) : saved_(current()) { current() = &t; }
        ~Use() { current() = saved_; }

    private:
        Tape* saved_;
    };

private:
    std::vector<std::function<void()>> steps_;
};

// RAII: disables recording (inference / evaluation).
class NoGrad {
public:
    NoGrad() : saved_(Tape::current()) { Tape::current() = nullptr; }
    ~NoGrad() { Tape::current() = saved_; }

private:
    Tape* saved_;
};

inline bool recording() { return Tape::current() != nullptr; }

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var affine(const Var& x, float scale, float shift = 0.f);  // scale*x + shift
Var gelu(const Var& x);
Var tanh_act(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope);

// ---- shape ----
Var reshape(const Var& x, std::vector<int> shape);
Var permute4(const Var& x, const std::vector<int>& perm);
Var slice_dim1(const Var& x, int t0, int t1);             // [B,T,D] -> [B,t1-t0,D]
Var slice_rows2(const Var& x, int t0, int t1);            // [T,D]   -> [t1-t0,D]
Var concat_dim0(const std::vector<Var>& xs);
Var concat_dim1(const std::vector<Var>& xs);
Var gather_batch(const Var& x, const std::vector<int>& idx);   // dim-0 index select
Var gather_rows(const Var& x, const std::vector<int>& rows);   // [B,T,D] -> [B,|rows|,D]
Var tile_batch(const Var& x, int batch);                  // [T,D] -> [B,T,D]
Var tile_rows(const Var& x, int rows);                    // [1,D] -> [R,D]

// t broadcasts over leading dims of x (x.numel % t.numel == 0).
Var add_tail_broadcast(const Var& x, const Var& t);
Var add_tail_broadcast(const Var& x, const Tensor& t);

// ---- linear algebra ----
Var linear(const Var& x, const Var& w, const Var& b);  // [..,K]x[K,N](+[N])
Var bmm(const Var& a, const Var& b);                   // [G,m,k]x[G,k,n]
Var bmm_nt(const Var& a, const Var& b);                // [G,m,k]x[G,n,k] -> [G,m,n]
Var softmax_lastdim(const Var& x);
Var layernorm(const Var& x, const Var& gamma, const Var& beta);

// ---- lookup / routing ----
Var embedding(const Var& table, const ITensor& idx);   // [K,D], [...]-> [...,D]
Var straight_through(const Var& x, const Tensor& quantized);
Var detach(const Var& x);

// ---- conv / image ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var global_avg_pool(const Var& x);                     // [B,C,H,W] -> [B,C]
Var bilinear_resize2d(const Var& x, int oh, int ow);   // [C,H,W] -> [C,oh,ow]
Var patchify(const Var& img, int f);                   // [B,C,H,W] -> [B,T,C*f*f]
Var unpatchify(const Var& x, int f, int channels, int res);  // inverse

// ---- reductions / losses ----
Var mean_all(const Var& x);
Var sum_all(const Var& x);
Var mse_loss(const Var& pred, const Tensor& target);
Var mse_loss(const Var& pred, const Var& target);
Var l1_loss(const Var& pred, const Tensor& target);
// -mean_b cos(a_b, t_b); zero-norm rows contribute 0 and are counted.
Var neg_cosine_rows(const Var& a, const Tensor& t, int* degenerate_rows = nullptr);
// Mean cross-entropy over positions with mask==1. Throws on all-zero mask.
Var cross_entropy_masked(const Var& logits, const ITensor& targets, const Tensor& mask);
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);  // scalars

}  // namespace df::ag
