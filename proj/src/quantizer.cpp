#include "quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

namespace df {

Codebook::Codebook(int K, int d, Rng& rng) : K_(K), d_(d) {
    if (K < 2 || d < 1) throw std::invalid_argument("codebook: K >= 2 and d >= 1 required");
    Tensor e({K, d});
    // VQGAN-style init: uniform in [-1/K, 1/K]
    for (int64_t i = 0; i < e.numel(); ++i) e[i] = (float)rng.uniform(-1.0 / K, 1.0 / K);
    entries_ = ag::make_var(std::move(e), true);
}

Codebook::Codebook(Tensor entries) {
    if (entries.ndim() != 2) throw std::invalid_argument("codebook: entries must be [K,d]");
    K_ = entries.dim(0);
    d_ = entries.dim(1);
    entries_ = ag::make_var(std::move(entries), true);
}

static void check_latents(const Tensor& latents, int d) {
    if (latents.dim(-1) != d)
        throw std::invalid_argument("quantize: last dimension " + std::to_string(latents.dim(-1)) +
                                    " != codebook dim " + std::to_string(d));
    for (int64_t i = 0; i < latents.numel(); ++i)
        if (!std::isfinite(latents[i])) throw std::runtime_error("quantize: non-finite input");
}

QuantizeResult Codebook::quantize(const Tensor& latents) const {
    check_latents(latents, d_);
    const int64_t n = latents.numel() / d_;
    std::vector<int> ishape = latents.shape();
    ishape.pop_back();
    QuantizeResult res;
    res.indices = ITensor(ishape);
    res.vectors = Tensor(latents.shape());
    res.distances = Tensor(ishape);
    const float* e = entries_->val.data();
    const float* x = latents.data();
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < n; ++t) {
        const float* xt = x + t * d_;
        int best = 0;
        float best_d = 0.f;
        for (int j = 0; j < K_; ++j) {
            float dist = 0.f;
            const float* ej = e + (int64_t)j * d_;
            for (int c = 0; c < d_; ++c) {
                const float diff = xt[c] - ej[c];
                dist += diff * diff;
            }
            if (j == 0 || dist < best_d) {  // strict <: ties keep the lowest index
                best_d = dist;
                best = j;
            }
        }
        res.indices[t] = best;
        res.distances[t] = best_d;
        std::memcpy(res.vectors.data() + t * d_, e + (int64_t)best * d_, sizeof(float) * d_);
    }
    return res;
}

Tensor Codebook::embed(const ITensor& indices) const {
    std::vector<int> oshape = indices.shape();
    oshape.push_back(d_);
    Tensor out(oshape);
    for (int64_t t = 0; t < indices.numel(); ++t) {
        if (indices[t] < 0 || indices[t] >= K_)
            throw std::out_of_range("embed: index " + std::to_string(indices[t]) + " outside [0," +
                                    std::to_string(K_) + ")");
        std::memcpy(out.data() + t * d_, entries_->val.data() + (int64_t)indices[t] * d_,
                    sizeof(float) * d_);
    }
    return out;
}

ag::Var Codebook::embed_var(const ITensor& indices) const { return ag::embedding(entries_, indices); }

ag::Var Codebook::quantize_st(const ag::Var& latents, QuantizeResult* result) const {
    QuantizeResult res = quantize(latents->val);
    ag::Var out = ag::straight_through(latents, res.vectors);
    if (result) *result = std::move(res);
    return out;
}

ITensor Codebook::perturb_sample(const Tensor& latents, int top_t, Rng& rng, double tau) const {
    if (top_t < 1 || top_t > K_)
        throw std::invalid_argument("perturb_sample: top_t outside [1,K]");
    check_latents(latents, d_);
    const int64_t n = latents.numel() / d_;
    std::vector<int> ishape = latents.shape();
    ishape.pop_back();
    ITensor out(ishape);
    const float* e = entries_->val.data();
    std::vector<std::pair<float, int>> dist(K_);
    std::vector<double> w(top_t);
    for (int64_t t = 0; t < n; ++t) {  // serial: rng stream order matters
        const float* xt = latents.data() + t * d_;
        for (int j = 0; j < K_; ++j) {
            float ds = 0.f;
            const float* ej = e + (int64_t)j * d_;
            for (int c = 0; c < d_; ++c) {
                const float diff = xt[c] - ej[c];
                ds += diff * diff;
            }
            dist[j] = {ds, j};
        }
        std::partial_sort(dist.begin(), dist.begin() + top_t, dist.end());
        if (tau <= 0.0) {
            out[t] = dist[rng.uniform_int(top_t)].second;
        } else {
            double mx = -1e300;
            for (int j = 0; j < top_t; ++j) mx = std::max(mx, -(double)dist[j].first / tau);
            double sum = 0.0;
            for (int j = 0; j < top_t; ++j) sum += (w[j] = std::exp(-(double)dist[j].first / tau - mx));
            double u = rng.uniform() * sum;
            int pick = top_t - 1;
            for (int j = 0; j < top_t; ++j) {
                u -= w[j];
                if (u <= 0.0) {
                    pick = j;
                    break;
                }
            }
            out[t] = dist[pick].second;
        }
    }
    return out;
}

VqLoss vq_loss(const ag::Var& latents, const Codebook& cb, const ITensor& indices, double beta) {
    ag::Var q = cb.embed_var(indices);
    if (!latents->val.same_shape(q->val)) throw std::invalid_argument("vq_loss: shape mismatch");
    VqLoss out;
    out.codebook_term = ag::mse_loss(q, latents->val);           // pulls entries toward latents
    out.commitment_term = ag::affine(ag::mse_loss(latents, cb.embed(indices)), (float)beta);
    return out;
}

double usage_stats(const ITensor& indices, int K) {
    std::unordered_set<int32_t> seen;
    for (int64_t i = 0; i < indices.numel(); ++i) {
        if (indices[i] < 0 || indices[i] >= K) throw std::out_of_range("usage_stats: index range");
        seen.insert(indices[i]);
    }
    return (double)seen.size() / (double)K;
}

}  // namespace df
