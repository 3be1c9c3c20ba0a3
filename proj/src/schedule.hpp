#pragma once

#include <stdexcept>

#include "core/rng.hpp"

namespace df {

// Token-count -> resolution law and group accounting. N latent tokens in
// groups of g cover square images up to R pixels; a prefix of n tokens must
// reconstruct the image at resolution(n) = R - b*(N-n)^alpha, rounded to the
// decoder patch grid.
struct ScheduleConfig {
    int N = 32;            // total latent tokens
    int R = 64;            // maximum resolution (square side)
    double alpha = 1.5;    // nonlinearity exponent
    int f = 8;             // decoder patch size
    int g = 4;             // tokens per group

    int group_count() const { return N / g; }  // M
    double coeff_b() const;                    // (R-1)/(N-1)^alpha

    // Throws std::invalid_argument when any invariant is violated.
    void validate() const;
};

// Pre-rounding resolution map; exact endpoints resolution_raw(1)=1,
// resolution_raw(N)=R up to floating-point rounding.
double resolution_raw(const ScheduleConfig& cfg, int n);

// Rounded to the nearest positive multiple of f; ties round up, floor at f.
int resolution_for_prefix(const ScheduleConfig& cfg, int n);

int resolution_for_group_prefix(const ScheduleConfig& cfg, int k);

// M with probability p_full, else uniform over {1..M-1}.
int sample_training_prefix(const ScheduleConfig& cfg, double p_full, Rng& rng);

// First group token-by-token, then one parallel step per group: g + k - 1.
int decode_step_count(const ScheduleConfig& cfg, int k_target);

std::pair<int, int> token_grid_shape(const ScheduleConfig& cfg, int resolution);

}  // namespace df
