#pragma once

#include <vector>

#include "mask.hpp"
#include "schedule.hpp"
#include "tokenizer.hpp"

namespace df {

struct ARConfig {
    int layers = 8;
    int width = 256;
    int heads = 8;
    int vocab = 512;  // tokenizer codebook size
    int N = 32;
    int g = 4;
    int num_classes = 10;
    double class_dropout_prob = 0.1;

    int M() const { return N / g; }
    // Training layout: [class | g1 reals | per group j>=2: g slots, g reals].
    int seq_len() const { return 1 + g + (M() - 1) * 2 * g; }

    void validate() const {
        if (width % heads != 0) throw std::invalid_argument("ar: width not divisible by heads");
        if (N < 1 || g < 1 || N % g != 0) throw std::invalid_argument("ar: N must be divisible by g");
        if (vocab < 2 || num_classes < 1) throw std::invalid_argument("ar: vocab/classes invalid");
        if (class_dropout_prob < 0.0 || class_dropout_prob > 1.0)
            throw std::invalid_argument("ar: class_dropout_prob outside [0,1]");
    }
};

struct GenerationParams {
    int top_k = 0;  // 0 resolves to the full vocabulary
    double top_p = 1.0;
    double temperature = 1.0;
    double cfg_scale = 1.5;
    int k_target = 0;  // 0 resolves to M
    uint64_t seed = 0;

    int resolved_top_k(int vocab) const { return top_k == 0 ? vocab : top_k; }
    int resolved_k_target(int M) const { return k_target == 0 ? M : k_target; }

    void validate(const ARConfig& cfg) const {
        const int tk = resolved_top_k(cfg.vocab);
        if (tk < 1 || tk > cfg.vocab) throw std::invalid_argument("gen: top_k outside [1,vocab]");
        if (!(top_p > 0.0) || top_p > 1.0) throw std::invalid_argument("gen: top_p outside (0,1]");
        if (!(temperature > 0.0)) throw std::invalid_argument("gen: temperature must be > 0");
        if (cfg_scale < 0.0) throw std::invalid_argument("gen: cfg_scale must be >= 0");
        const int kt = resolved_k_target(cfg.M());
        if (kt < 1 || kt > cfg.M()) throw std::out_of_range("gen: k_target outside [1,M]");
    }
};

// Token descriptors for the hybrid attention layout.
enum class ArTok { cls, real, slot };
struct ArPos {
    ArTok type;
    int group;  // 1-based; 0 for the class token
    int intra;  // position within the group
};

std::vector<ArPos> ar_training_layout(int N, int g);
bool ar_attends(const ArPos& q, const ArPos& k);
AttentionMask build_mask_from(const std::vector<ArPos>& layout);
AttentionMask build_ar_mask(const ARConfig& cfg);

// uncond + scale * (cond - uncond); exact passthrough at scale 0 and 1.
Tensor cfg_combine(const Tensor& cond, const Tensor& uncond, double scale);

// Temperature, then top-k, then nucleus, then one multinomial draw.
int sample_token(const Tensor& logits, int top_k, double top_p, double temperature, Rng& rng);

struct GenerateResult {
    ITensor tokens;            // [B, k_target*g]
    int64_t steps_per_stream;  // model invocations per guidance stream
};

// Class-conditional decoder-only transformer over token indices. The first
// group is predicted token by token from the causal stream; every later group
// is predicted in one step from its mask-slot outputs.
class ARModel {
public:
    ARModel(ARConfig cfg, uint64_t seed);

    const ARConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }

    // Teacher-forcing logits at every predictable position: [B, N, vocab].
    // labels may use index num_classes for the learned null class.
    ag::Var forward_train(const ITensor& indices, const ITensor& labels) const;

    // Two guidance streams (class and null) run in one batched forward per
    // step; sampling within a group is independent per token.
    GenerateResult generate(const std::vector<int>& class_labels, const GenerationParams& p) const;

private:
    ag::Var pos_for_group(int group_1based, int len) const;  // [len, width]
    ag::Var embed_reals(const ITensor& idx, int group_1based) const;
    ag::Var transformer(const ag::Var& x, const Tensor& additive_mask) const;

    ARConfig cfg_;
    ParamRegistry reg_;
    ag::Var tok_emb_, class_emb_, slot_emb_, pos_group_, pos_intra_;
    std::vector<TransformerBlock> blocks_;
    ag::Var ln_g_, ln_b_, head_w_, head_b_;
};

inline ag::Var ar_loss(const ag::Var& logits, const ITensor& targets, const Tensor& loss_mask) {
    return ag::cross_entropy_masked(logits, targets, loss_mask);
}

}  // namespace df
