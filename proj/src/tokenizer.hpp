#pragma once

#include <string>
#include <vector>

#include "core/autograd.hpp"
#include "core/rng.hpp"
#include "mask.hpp"
#include "quantizer.hpp"
#include "schedule.hpp"

namespace df {

struct EncoderConfig {
    int layers = 6;
    int width = 256;
    int heads = 8;
    int f_enc = 8;  // encoder patch size; encoder always sees full-resolution input

    void validate(const ScheduleConfig& s) const {
        if (width % heads != 0) throw std::invalid_argument("encoder: width not divisible by heads");
        if (s.R % f_enc != 0) throw std::invalid_argument("encoder: R not divisible by f_enc");
    }
};

struct DecoderConfig {
    int layers = 6;
    int width = 256;
    int heads = 8;

    void validate() const {
        if (width % heads != 0) throw std::invalid_argument("decoder: width not divisible by heads");
    }
};

enum class SeqKind { clean, self_correction };

// Ordered 1D token sequence with group structure. `vectors` carries the
// d-dimensional (quantized or continuous) tokens as a graph node.
struct LatentSequence {
    ag::Var vectors;      // [B, n, d]
    ITensor indices;      // [B, n] when quantized
    int group_size = 1;
    SeqKind kind = SeqKind::clean;
    int perturbed_group = -1;  // m (1-based) for self-correction sequences

    int length() const { return vectors->val.dim(1); }
    int groups() const { return length() / group_size; }
};

struct ParamRegistry {
    std::vector<std::pair<std::string, ag::Var>> items;

    ag::Var add(const std::string& name, Tensor init) {
        items.emplace_back(name, ag::make_var(std::move(init), true));
        return items.back().second;
    }
    std::vector<ag::Var> vars() const {
        std::vector<ag::Var> v;
        v.reserve(items.size());
        for (const auto& [n, p] : items) v.push_back(p);
        return v;
    }
    int64_t count() const {
        int64_t n = 0;
        for (const auto& [name, p] : items) n += p->val.numel();
        return n;
    }
};

Tensor trunc_normal_init(std::vector<int> shape, Rng& rng, double stddev = 0.02);

struct TransformerBlock {
    ag::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    ag::Var ln2_g, ln2_b, w1, b1, w2, b2;
    int heads = 8;

    void init(ParamRegistry& reg, const std::string& prefix, int width, int heads, Rng& rng);
    ag::Var forward(const ag::Var& x, const Tensor& additive_mask) const;  // empty mask = bidirectional
};

// Coarse-to-fine 1D tokenizer: grouped-causal encoder over learnable query
// tokens, resolution-conditioned decoder over duplicated mask tokens, and the
// re-encode path used to build self-correction sequences.
class Tokenizer {
public:
    Tokenizer(ScheduleConfig s, EncoderConfig e, DecoderConfig d, int K, int dcode, uint64_t seed);

    const ScheduleConfig& schedule() const { return sched_; }
    const EncoderConfig& encoder_config() const { return enc_cfg_; }
    const DecoderConfig& decoder_config() const { return dec_cfg_; }
    Codebook& codebook() { return *codebook_; }
    const Codebook& codebook() const { return *codebook_; }
    ParamRegistry& params() { return reg_; }
    int num_image_tokens() const { return patches_per_side_ * patches_per_side_; }

    // Full hidden states [B, P+N, width] (image rows included; used by the
    // causality tests). `query_override` replaces the learned query tokens.
    ag::Var encode_hidden_full(const Tensor& images, const Tensor* query_override = nullptr) const;

    // Continuous latents for the first k groups: [B, k*g, width].
    ag::Var encode(const Tensor& images, int k, const Tensor* query_override = nullptr) const;

    // Latent head applied: [B, k*g, d]; this is what the quantizer consumes.
    ag::Var encode_latents(const Tensor& images, int k, const Tensor* query_override = nullptr) const;

    // Quantized prefix -> image at target_resolution, tanh-bounded.
    ag::Var decode(const ag::Var& quantized_prefix, int target_resolution) const;

    // Corrected continuous latents (d-dim) for groups m+1..k. The noisy group
    // is detached inside: no gradient ever reaches it.
    ag::Var reencode_with_prefix(const Tensor& images, const ag::Var& clean_prefix,
                                 const ag::Var& noisy_group, int k) const;

    ag::Var latent_head(const ag::Var& hidden) const;  // width -> d

    AttentionMask encoder_mask() const { return build_encoder_mask(num_image_tokens(), sched_.N, sched_.g); }

private:
    ag::Var encoder_body(const ag::Var& tokens) const;  // runs blocks + final LN

    ScheduleConfig sched_;
    EncoderConfig enc_cfg_;
    DecoderConfig dec_cfg_;
    ParamRegistry reg_;
    std::unique_ptr<Codebook> codebook_;
    int patches_per_side_;

    // encoder
    ag::Var patch_w_, patch_b_, pos_img_, query_tokens_, pos_query_;
    std::vector<TransformerBlock> enc_blocks_;
    ag::Var enc_ln_g_, enc_ln_b_, latent_w_, latent_b_;
    ag::Var prefix_w_, prefix_b_;  // d -> width projection for the re-encode path
    Tensor enc_mask_additive_;

    // decoder
    ag::Var dec_in_w_, dec_in_b_, pos_latent_, mask_seed_, pos_grid_;
    std::vector<TransformerBlock> dec_blocks_;
    ag::Var dec_ln_g_, dec_ln_b_, pixel_w_, pixel_b_;
};

}  // namespace df
