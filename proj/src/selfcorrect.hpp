#pragma once

#include "tokenizer.hpp"

namespace df {

// Self-correction sequence {Z^{1:m-1}, noisy Z~^m, corrected Z^{m+1:k}} for a
// batch of images. The whole batch shares one perturbed group index m (drawn
// uniformly from [1, k-1] per call); independent per-image draws come from the
// training loop calling this across steps.
struct SelfCorrectionSample {
    LatentSequence sequence;      // kind = self_correction
    LatentSequence paired_clean;  // agrees bit-exactly with sequence on groups 1..m-1
    int m = 0;
    int k = 0;
    int target_resolution = 0;

    ag::Var noisy_group_var;        // pre-detach handle; never receives gradient
    ag::Var clean_continuous;       // [B, k*g, d]
    ag::Var corrected_continuous;   // [B, (k-m)*g, d]
    ITensor corrected_indices;      // [B, (k-m)*g]
};

SelfCorrectionSample build_self_correction_sequence(const Tokenizer& tok, const Tensor& images,
                                                    int k, Rng& rng, int top_t = 50,
                                                    double tau = 0.0);

// One training batch: the clean sequences of all images plus, for images
// selected with probability p_sc, their self-correction sequences, every row
// paired with the same box-downsampled target.
struct TokenizerBatch {
    ag::Var vectors;   // [B + S, k*g, d] quantized (straight-through)
    ITensor indices;   // [B + S, k*g]
    Tensor targets;    // [B + S, 3, r, r]
    std::vector<SeqKind> kinds;
    std::vector<int> m;       // -1 for clean rows
    std::vector<int> source;  // input image index per row

    ag::Var clean_continuous;      // [B, k*g, d]
    ITensor clean_indices;         // [B, k*g]
    ag::Var corrected_continuous;  // [S, (k-m)*g, d]; empty when S == 0
    ITensor corrected_indices;
    ag::Var noisy_group_var;

    int k = 0;
    int resolution = 0;
    int shared_m = -1;

    int rows() const { return (int)kinds.size(); }
};

TokenizerBatch make_tokenizer_batch(const Tokenizer& tok, const Tensor& images, int k, double p_sc,
                                    Rng& rng, int top_t = 50, double tau = 0.0);

// Teacher-forcing triple for the AR model. Inputs and targets are the
// sequence itself (conditioning is decided by the AR attention layout); the
// loss mask optionally zeroes the perturbed group of a self-correction row.
struct ArTrainingSequence {
    ITensor input;     // [B, n]
    ITensor target;    // [B, n]
    Tensor loss_mask;  // [B, n] of 0/1
};

ArTrainingSequence make_ar_training_sequence(const LatentSequence& seq, bool exclude_noisy_group);

}  // namespace df
