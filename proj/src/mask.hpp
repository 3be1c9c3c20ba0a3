#pragma once

#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace df {

// Boolean allow/deny matrix; entry (i,j) = query i may attend to key j.
struct AttentionMask {
    int T = 0;
    std::vector<uint8_t> allow;  // row-major [T,T]

    AttentionMask() = default;
    explicit AttentionMask(int t) : T(t), allow((size_t)t * t, 0) {}

    bool at(int i, int j) const { return allow[(size_t)i * T + j] != 0; }
    void set(int i, int j, bool v) { allow[(size_t)i * T + j] = v ? 1 : 0; }

    // Additive form for attention logits: 0 where allowed, -1e30 otherwise.
    Tensor additive() const {
        Tensor t({T, T});
        for (int64_t i = 0; i < (int64_t)T * T; ++i) t[i] = allow[i] ? 0.f : -1e30f;
        return t;
    }
};

// Encoder layout: [image tokens | N latent query tokens in groups of g].
// Image tokens are bidirectional among themselves and never see latents;
// latents see all image tokens; the first latent group is causal token by
// token; later groups are bidirectional inside and causal across groups.
AttentionMask build_encoder_mask(int num_image_tokens, int N, int g);

}  // namespace df
