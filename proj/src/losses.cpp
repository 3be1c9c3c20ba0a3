#include "losses.hpp"

namespace df {

ConvPyramid::ConvPyramid(int in_ch, std::vector<int> channels, uint64_t seed, bool trainable)
    : channels_(std::move(channels)), trainable_(trainable) {
    Rng rng(seed);
    int prev = in_ch;
    for (size_t i = 0; i < channels_.size(); ++i) {
        const int ch = channels_[i];
        // He-style scale keeps activations O(1) through the stack
        const double std = std::sqrt(2.0 / (prev * 9.0));
        Tensor w({ch, prev, 3, 3});
        for (int64_t j = 0; j < w.numel(); ++j) w[j] = (float)rng.normal(0.0, std);
        w_.push_back(trainable_ ? reg_.add("stage" + std::to_string(i) + ".w", std::move(w))
                                : ag::make_var(std::move(w), false));
        b_.push_back(trainable_ ? reg_.add("stage" + std::to_string(i) + ".b", Tensor({ch}))
                                : ag::make_var(Tensor({ch}), false));
        prev = ch;
    }
}

std::vector<ag::Var> ConvPyramid::features(const ag::Var& image) const {
    std::vector<ag::Var> out;
    ag::Var x = image;
    for (size_t i = 0; i < w_.size(); ++i) {
        x = ag::relu(ag::conv2d(x, w_[i], b_[i], 2, 1));
        out.push_back(x);
    }
    return out;
}

ag::Var ConvPyramid::pooled(const ag::Var& image) const {
    return ag::global_avg_pool(features(image).back());
}

TeacherEmbedder::TeacherEmbedder(int code_dim, int feat_width, uint64_t seed)
    : teacher_(3, {16, 32, 64, feat_width}, Rng::derive(seed, 0x7e4c), false) {
    Rng rng(Rng::derive(seed, 0x3a11));
    const int hidden = 128;
    w1_ = head_reg_.add("align.w1", trunc_normal_init({code_dim, hidden}, rng));
    b1_ = head_reg_.add("align.b1", Tensor({hidden}));
    w2_ = head_reg_.add("align.w2", trunc_normal_init({hidden, hidden}, rng));
    b2_ = head_reg_.add("align.b2", Tensor({hidden}));
    w3_ = head_reg_.add("align.w3", trunc_normal_init({hidden, feat_width}, rng));
    b3_ = head_reg_.add("align.b3", Tensor({feat_width}));
}

Tensor TeacherEmbedder::teacher_feature(const Tensor& images) const {
    ag::NoGrad ng;
    return teacher_.pooled(ag::constant(images))->val;
}

ag::Var TeacherEmbedder::mlp_head(const ag::Var& z1) const {
    using namespace ag;
    Var h = gelu(linear(z1, w1_, b1_));
    h = gelu(linear(h, w2_, b2_));
    return linear(h, w3_, b3_);
}

PatchDiscriminator::PatchDiscriminator(uint64_t seed) {
    Rng rng(seed);
    const std::vector<int> chans = {32, 64, 64};
    int prev = 3;
    for (size_t i = 0; i < chans.size(); ++i) {
        const double std = std::sqrt(2.0 / (prev * 9.0));
        Tensor w({chans[i], prev, 3, 3});
        for (int64_t j = 0; j < w.numel(); ++j) w[j] = (float)rng.normal(0.0, std);
        w_.push_back(reg_.add("disc.stage" + std::to_string(i) + ".w", std::move(w)));
        b_.push_back(reg_.add("disc.stage" + std::to_string(i) + ".b", Tensor({chans[i]})));
        prev = chans[i];
    }
    head_w_ = reg_.add("disc.head.w", trunc_normal_init({1, prev, 1, 1}, rng));
    head_b_ = reg_.add("disc.head.b", Tensor({1}));
}

ag::Var PatchDiscriminator::logits(const ag::Var& image, bool frozen_params) const {
    auto wrap = [&](const ag::Var& v) { return frozen_params ? ag::detach(v) : v; };
    ag::Var x = image;
    for (size_t i = 0; i < w_.size(); ++i)
        x = ag::leaky_relu(ag::conv2d(x, wrap(w_[i]), wrap(b_[i]), 2, 1), 0.2f);
    return ag::conv2d(x, wrap(head_w_), wrap(head_b_), 1, 0);
}

ag::Var reconstruction_loss(const ag::Var& pred, const Tensor& target) {
    return ag::l1_loss(pred, target);
}

ag::Var perceptual_loss(const ag::Var& pred, const Tensor& target, const FeatureExtractor& extractor) {
    std::vector<ag::Var> fp = extractor(pred);
    std::vector<ag::Var> ft;
    {
        ag::NoGrad ng;  // target side carries no gradient
        ft = extractor(ag::constant(target));
    }
    if (fp.size() != ft.size()) throw std::invalid_argument("perceptual_loss: stage count mismatch");
    std::vector<std::pair<double, ag::Var>> terms;
    for (size_t i = 0; i < fp.size(); ++i) {
        if (!fp[i]->val.same_shape(ft[i]->val))
            throw std::invalid_argument("perceptual_loss: feature shape mismatch at stage " +
                                        std::to_string(i));
        terms.emplace_back(1.0, ag::mse_loss(fp[i], ft[i]->val));
    }
    return ag::weighted_sum(terms);
}

AdvLosses adversarial_losses(const PatchDiscriminator& disc, const Tensor& real, const ag::Var& fake) {
    using namespace ag;
    AdvLosses out;
    Var d_real = disc.logits(constant(real));
    Var d_fake_detached = disc.logits(detach(fake));
    // hinge
    Var loss_real = mean_all(relu(affine(d_real, -1.f, 1.f)));
    Var loss_fake = mean_all(relu(affine(d_fake_detached, 1.f, 1.f)));
    out.d_loss = weighted_sum({{1.0, loss_real}, {1.0, loss_fake}});
    // generator sees the discriminator as frozen
    Var d_fake = disc.logits(fake, /*frozen_params=*/true);
    out.g_loss = affine(mean_all(d_fake), -1.f);
    return out;
}

ag::Var alignment_loss(const ag::Var& z1, const Tensor& images, const TeacherEmbedder& teacher,
                       int* degenerate_rows) {
    Tensor feat = teacher.teacher_feature(images);
    ag::Var proj = teacher.mlp_head(z1);
    return ag::neg_cosine_rows(proj, feat, degenerate_rows);
}

ag::Var total_tokenizer_loss(const LossComponents& c, const LossWeights& w) {
    w.validate();
    std::vector<std::pair<double, ag::Var>> terms;
    auto push = [&](double weight, const ag::Var& v) {
        if (v) terms.emplace_back(weight, v);
    };
    push(w.w_recon, c.recon);
    push(w.w_perceptual, c.perceptual);
    push(w.w_adv, c.adv_g);
    push(w.w_vq, c.vq_codebook);
    push(w.w_vq, c.vq_commit);
    push(w.w_align, c.align);
    if (terms.empty()) {
        return ag::constant(Tensor({1}));
    }
    return ag::weighted_sum(terms);
}

}  // namespace df
