#pragma once

#include "core/autograd.hpp"
#include "core/rng.hpp"

namespace df {

struct QuantizeResult {
    ITensor indices;   // [..., n]
    Tensor vectors;    // [..., n, d]; rows are exact codebook entries
    Tensor distances;  // squared euclidean distance to the selected entry
};

// Learnable vector-quantization codebook with nearest-neighbor lookup,
// straight-through gradients and perturbed top-T sampling.
class Codebook {
public:
    Codebook(int K, int d, Rng& rng);
    explicit Codebook(Tensor entries);  // takes [K,d]

    int K() const { return K_; }
    int d() const { return d_; }
    ag::Var entries() const { return entries_; }

    // argmin_j ||x - e_j||^2, ties to the lowest index.
    QuantizeResult quantize(const Tensor& latents) const;

    Tensor embed(const ITensor& indices) const;
    // Graph version: gradients flow into the codebook entries.
    ag::Var embed_var(const ITensor& indices) const;

    // Straight-through wrapper: value is the quantized vectors, gradient
    // passes unchanged to the continuous latents.
    ag::Var quantize_st(const ag::Var& latents, QuantizeResult* result = nullptr) const;

    // Uniform sample from the top_t nearest entries per token. With tau > 0
    // the law becomes softmax(-dist/tau) over that set instead.
    ITensor perturb_sample(const Tensor& latents, int top_t, Rng& rng, double tau = 0.0) const;

private:
    int K_, d_;
    ag::Var entries_;
};

// codebook_term = ||sg(latents) - quantized||^2, commitment = beta*||latents - sg(q)||^2.
struct VqLoss {
    ag::Var codebook_term;
    ag::Var commitment_term;
};
VqLoss vq_loss(const ag::Var& latents, const Codebook& cb, const ITensor& indices, double beta);

// Distinct indices used / K.
double usage_stats(const ITensor& indices, int K);

}  // namespace df
