#pragma once

#include <functional>

#include "core/autograd.hpp"
#include "core/rng.hpp"
#include "tokenizer.hpp"

namespace df {

struct LossWeights {
    double w_recon = 1.0;
    double w_perceptual = 1.0;
    double w_adv = 0.0;  // tiny patch discriminator behind this flag
    double w_vq = 1.0;
    double w_align = 0.1;

    void validate() const {
        for (double w : {w_recon, w_perceptual, w_adv, w_vq, w_align})
            if (!(w >= 0.0) || !std::isfinite(w))
                throw std::invalid_argument("loss weights must be finite and >= 0");
    }
};

// Frozen 4-stage strided conv stack. Stands in for a pretrained feature
// extractor at this scale; swap via the FeatureExtractor interface for a real
// one.
class ConvPyramid {
public:
    ConvPyramid(int in_ch, std::vector<int> channels, uint64_t seed, bool trainable);

    std::vector<ag::Var> features(const ag::Var& image) const;  // one entry per stage
    ag::Var pooled(const ag::Var& image) const;                 // GAP of the last stage
    int out_width() const { return channels_.back(); }
    ParamRegistry& params() { return reg_; }

private:
    std::vector<int> channels_;
    std::vector<ag::Var> w_, b_;
    ParamRegistry reg_;
    bool trainable_;
};

using FeatureExtractor = std::function<std::vector<ag::Var>(const ag::Var&)>;

// Frozen image->vector teacher plus the trainable 3-layer MLP head applied to
// the first latent token.
class TeacherEmbedder {
public:
    TeacherEmbedder(int code_dim, int feat_width, uint64_t seed);

    Tensor teacher_feature(const Tensor& images) const;  // [B, feat_width], no graph
    ag::Var mlp_head(const ag::Var& z1) const;           // [B, code_dim] -> [B, feat_width]
    ParamRegistry& head_params() { return head_reg_; }
    const ConvPyramid& teacher() const { return teacher_; }

private:
    ConvPyramid teacher_;
    ParamRegistry head_reg_;
    ag::Var w1_, b1_, w2_, b2_, w3_, b3_;
};

// Patch discriminator for the optional adversarial term.
class PatchDiscriminator {
public:
    explicit PatchDiscriminator(uint64_t seed);
    // [B,1,h,w]; frozen_params detaches the weights (generator-side pass).
    ag::Var logits(const ag::Var& image, bool frozen_params = false) const;
    ParamRegistry& params() { return reg_; }

private:
    ParamRegistry reg_;
    std::vector<ag::Var> w_, b_;
    ag::Var head_w_, head_b_;
};

ag::Var reconstruction_loss(const ag::Var& pred, const Tensor& target);  // mean absolute error

ag::Var perceptual_loss(const ag::Var& pred, const Tensor& target, const FeatureExtractor& extractor);

struct AdvLosses {
    ag::Var d_loss;  // hinge: relu(1-D(real)) + relu(1+D(fake))
    ag::Var g_loss;  // -mean D(fake)
};
AdvLosses adversarial_losses(const PatchDiscriminator& disc, const Tensor& real, const ag::Var& fake);

// -cos(MLP(z1), teacher(image)); teacher output is a constant.
ag::Var alignment_loss(const ag::Var& z1, const Tensor& images, const TeacherEmbedder& teacher,
                       int* degenerate_rows = nullptr);

struct LossComponents {
    ag::Var recon, perceptual, adv_g, vq_codebook, vq_commit, align;
    ag::Var adv_d;  // discriminator side; not part of the generator total
};

ag::Var total_tokenizer_loss(const LossComponents& c, const LossWeights& w);

}  // namespace df
