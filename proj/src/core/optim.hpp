#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "core/autograd.hpp"

namespace df {

// Decoupled-weight-decay Adam with cosine learning-rate decay.
class AdamW {
public:
    struct Hyper {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.95;
        double eps = 1e-8;
        double weight_decay = 0.0;
        int64_t total_steps = 0;  // 0 disables the cosine schedule
    };

    AdamW(std::vector<ag::Var> params, Hyper h) : params_(std::move(params)), h_(h) {
        for (const auto& p : params_) {
            m_.emplace_back(p->val.shape());
            v_.emplace_back(p->val.shape());
        }
    }

    double lr_at(int64_t step) const {
        if (h_.total_steps <= 0) return h_.lr;
        const double t = std::min<double>((double)step / (double)h_.total_steps, 1.0);
        return h_.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    }

    void zero_grad() {
        for (auto& p : params_) {
            if (p->grad.defined())
                std::fill(p->grad.data(), p->grad.data() + p->grad.numel(), 0.f);
        }
    }

    void step() {
        ++step_;
        const double lr = lr_at(step_ - 1);
        const double bc1 = 1.0 - std::pow(h_.beta1, (double)step_);
        const double bc2 = 1.0 - std::pow(h_.beta2, (double)step_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p->grad.defined()) continue;
            float* w = p->val.data();
            const float* g = p->grad.data();
            float* m = m_[pi].data();
            float* v = v_[pi].data();
            const int64_t n = p->val.numel();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                m[i] = (float)(h_.beta1 * m[i] + (1.0 - h_.beta1) * g[i]);
                v[i] = (float)(h_.beta2 * v[i] + (1.0 - h_.beta2) * (double)g[i] * g[i]);
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double upd = mhat / (std::sqrt(vhat) + h_.eps);
                upd += h_.weight_decay * w[i];
                w[i] = (float)(w[i] - lr * upd);
            }
        }
    }

    int64_t step_count() const { return step_; }
    void set_step_count(int64_t s) { step_ = s; }
    const std::vector<Tensor>& moments1() const { return m_; }
    const std::vector<Tensor>& moments2() const { return v_; }
    Tensor& moment1(size_t i) { return m_[i]; }
    Tensor& moment2(size_t i) { return v_[i]; }
    size_t num_params() const { return params_.size(); }

private:
    std::vector<ag::Var> params_;
    Hyper h_;
    std::vector<Tensor> m_, v_;
    int64_t step_ = 0;
};

}  // namespace df
