#include "selfcorrect.hpp"

#include <cstring>

#include "core/image.hpp"

namespace df {

namespace {

ITensor islice_cols(const ITensor& x, int c0, int c1) {
    const int B = x.dim(0), n = x.dim(1);
    ITensor out({B, c1 - c0});
    for (int b = 0; b < B; ++b)
        for (int c = c0; c < c1; ++c) out[(int64_t)b * (c1 - c0) + (c - c0)] = x[(int64_t)b * n + c];
    return out;
}

ITensor iconcat_cols(const std::vector<ITensor>& xs) {
    const int B = xs[0].dim(0);
    int n = 0;
    for (const auto& x : xs) n += x.dim(1);
    ITensor out({B, n});
    for (int b = 0; b < B; ++b) {
        int off = 0;
        for (const auto& x : xs) {
            for (int c = 0; c < x.dim(1); ++c) out[(int64_t)b * n + off + c] = x[(int64_t)b * x.dim(1) + c];
            off += x.dim(1);
        }
    }
    return out;
}

ITensor igather_rows(const ITensor& x, const std::vector<int>& idx) {
    const int n = x.dim(1);
    ITensor out({(int)idx.size(), n});
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data() + r * n, x.data() + (int64_t)idx[r] * n, sizeof(int32_t) * n);
    return out;
}

Tensor tgather_batch(const Tensor& x, const std::vector<int>& idx) {
    const int64_t inner = x.numel() / x.dim(0);
    std::vector<int> shape = x.shape();
    shape[0] = (int)idx.size();
    Tensor out(shape);
    for (size_t r = 0; r < idx.size(); ++r)
        std::memcpy(out.data() + (int64_t)r * inner, x.data() + (int64_t)idx[r] * inner,
                    sizeof(float) * inner);
    return out;
}

}  // namespace

SelfCorrectionSample build_self_correction_sequence(const Tokenizer& tok, const Tensor& images,
                                                    int k, Rng& rng, int top_t, double tau) {
    if (k < 2) throw std::out_of_range("self-correction: k must be >= 2");
    const ScheduleConfig& s = tok.schedule();
    if (k > s.group_count()) throw std::out_of_range("self-correction: k exceeds group count");
    const int g = s.g;
    const Codebook& cb = tok.codebook();

    SelfCorrectionSample out;
    out.k = k;
    out.target_resolution = resolution_for_group_prefix(s, k);

    // clean pass
    out.clean_continuous = tok.encode_latents(images, k);
    QuantizeResult clean_q;
    ag::Var clean_st = cb.quantize_st(out.clean_continuous, &clean_q);
    out.paired_clean.vectors = clean_st;
    out.paired_clean.indices = clean_q.indices;
    out.paired_clean.group_size = g;
    out.paired_clean.kind = SeqKind::clean;

    // perturb one group, re-encode the suffix
    const int m = 1 + (int)rng.uniform_int(k - 1);
    out.m = m;
    Tensor group_latents = Tensor(
        std::vector<int>{out.clean_continuous->val.dim(0), g, cb.d()});
    {
        const Tensor& cont = out.clean_continuous->val;
        const int B = cont.dim(0), n = cont.dim(1), d = cont.dim(2);
        for (int b = 0; b < B; ++b)
            std::memcpy(group_latents.data() + (int64_t)b * g * d,
                        cont.data() + ((int64_t)b * n + (m - 1) * g) * d, sizeof(float) * g * d);
    }
    ITensor noisy_idx = cb.perturb_sample(group_latents, top_t, rng, tau);
    out.noisy_group_var = ag::make_var(cb.embed(noisy_idx), true);
    ag::Var noisy = ag::detach(out.noisy_group_var);

    ag::Var clean_prefix = m > 1 ? ag::slice_dim1(clean_st, 0, (m - 1) * g) : ag::Var();
    out.corrected_continuous = tok.reencode_with_prefix(images, clean_prefix, noisy, k);
    QuantizeResult corr_q;
    ag::Var corr_st = cb.quantize_st(out.corrected_continuous, &corr_q);
    out.corrected_indices = corr_q.indices;

    std::vector<ag::Var> parts;
    if (clean_prefix) parts.push_back(clean_prefix);
    parts.push_back(noisy);
    parts.push_back(corr_st);
    out.sequence.vectors = ag::concat_dim1(parts);
    out.sequence.indices = iconcat_cols(
        m > 1 ? std::vector<ITensor>{islice_cols(clean_q.indices, 0, (m - 1) * g), noisy_idx,
                                     corr_q.indices}
              : std::vector<ITensor>{noisy_idx, corr_q.indices});
    out.sequence.group_size = g;
    out.sequence.kind = SeqKind::self_correction;
    out.sequence.perturbed_group = m;
    return out;
}

TokenizerBatch make_tokenizer_batch(const Tokenizer& tok, const Tensor& images, int k, double p_sc,
                                    Rng& rng, int top_t, double tau) {
    const ScheduleConfig& s = tok.schedule();
    const int B = images.dim(0);
    const int g = s.g;
    const Codebook& cb = tok.codebook();

    TokenizerBatch batch;
    batch.k = k;
    batch.resolution = resolution_for_group_prefix(s, k);
    const Tensor targets = img::downsample_area(images, batch.resolution);

    batch.clean_continuous = tok.encode_latents(images, k);
    QuantizeResult clean_q;
    ag::Var clean_st = cb.quantize_st(batch.clean_continuous, &clean_q);
    batch.clean_indices = clean_q.indices;

    std::vector<int> sel;
    if (k >= 2) {
        for (int b = 0; b < B; ++b)
            if (rng.bernoulli(p_sc)) sel.push_back(b);
    }
    const int S = (int)sel.size();

    for (int b = 0; b < B; ++b) {
        batch.kinds.push_back(SeqKind::clean);
        batch.m.push_back(-1);
        batch.source.push_back(b);
    }

    if (S == 0) {
        batch.vectors = clean_st;
        batch.indices = clean_q.indices;
        batch.targets = targets;
        return batch;
    }

    const int m = 1 + (int)rng.uniform_int(k - 1);
    batch.shared_m = m;
    const Tensor images_sub = tgather_batch(images, sel);
    ag::Var clean_sub = ag::gather_batch(clean_st, sel);
    ITensor clean_idx_sub = igather_rows(clean_q.indices, sel);

    Tensor group_latents({S, g, cb.d()});
    {
        const Tensor& cont = batch.clean_continuous->val;
        const int n = cont.dim(1), d = cont.dim(2);
        for (int r = 0; r < S; ++r)
            std::memcpy(group_latents.data() + (int64_t)r * g * d,
                        cont.data() + ((int64_t)sel[r] * n + (m - 1) * g) * d,
                        sizeof(float) * g * d);
    }
    ITensor noisy_idx = cb.perturb_sample(group_latents, top_t, rng, tau);
    batch.noisy_group_var = ag::make_var(cb.embed(noisy_idx), true);
    ag::Var noisy = ag::detach(batch.noisy_group_var);

    ag::Var clean_prefix = m > 1 ? ag::slice_dim1(clean_sub, 0, (m - 1) * g) : ag::Var();
    batch.corrected_continuous = tok.reencode_with_prefix(images_sub, clean_prefix, noisy, k);
    QuantizeResult corr_q;
    ag::Var corr_st = cb.quantize_st(batch.corrected_continuous, &corr_q);
    batch.corrected_indices = corr_q.indices;

    std::vector<ag::Var> parts;
    if (clean_prefix) parts.push_back(clean_prefix);
    parts.push_back(noisy);
    parts.push_back(corr_st);
    ag::Var sc_vectors = ag::concat_dim1(parts);
    ITensor sc_indices = iconcat_cols(
        m > 1 ? std::vector<ITensor>{islice_cols(clean_idx_sub, 0, (m - 1) * g), noisy_idx,
                                     corr_q.indices}
              : std::vector<ITensor>{noisy_idx, corr_q.indices});

    batch.vectors = ag::concat_dim0({clean_st, sc_vectors});
    {
        const int n = clean_q.indices.dim(1);
        ITensor all({B + S, n});
        std::memcpy(all.data(), clean_q.indices.data(), sizeof(int32_t) * (int64_t)B * n);
        std::memcpy(all.data() + (int64_t)B * n, sc_indices.data(), sizeof(int32_t) * (int64_t)S * n);
        batch.indices = all;
    }
    {
        Tensor all(std::vector<int>{B + S, 3, batch.resolution, batch.resolution});
        std::memcpy(all.data(), targets.data(), sizeof(float) * targets.numel());
        const Tensor targets_sub = tgather_batch(targets, sel);
        std::memcpy(all.data() + targets.numel(), targets_sub.data(),
                    sizeof(float) * targets_sub.numel());
        batch.targets = all;
    }
    for (int r = 0; r < S; ++r) {
        batch.kinds.push_back(SeqKind::self_correction);
        batch.m.push_back(m);
        batch.source.push_back(sel[r]);
    }
    return batch;
}

ArTrainingSequence make_ar_training_sequence(const LatentSequence& seq, bool exclude_noisy_group) {
    if (!seq.indices.defined())
        throw std::logic_error("make_ar_training_sequence: sequence has no quantized indices");
    ArTrainingSequence out;
    out.input = seq.indices;
    out.target = seq.indices;
    out.loss_mask = Tensor::full(seq.indices.shape(), 1.f);
    if (exclude_noisy_group && seq.kind == SeqKind::self_correction) {
        const int g = seq.group_size, m = seq.perturbed_group;
        const int B = seq.indices.dim(0), n = seq.indices.dim(1);
        for (int b = 0; b < B; ++b)
            for (int c = (m - 1) * g; c < m * g; ++c) out.loss_mask[(int64_t)b * n + c] = 0.f;
    }
    return out;
}

}  // namespace df
