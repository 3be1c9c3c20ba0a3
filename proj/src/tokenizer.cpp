#include "tokenizer.hpp"

#include <cmath>

namespace df {

AttentionMask build_encoder_mask(int num_image_tokens, int N, int g) {
    if (num_image_tokens < 1 || N < 1 || g < 1 || N % g != 0)
        throw std::invalid_argument("build_encoder_mask: invalid layout sizes");
    const int P = num_image_tokens;
    const int T = P + N;
    AttentionMask m(T);
    const auto group_of = [&](int latent) { return latent / g; };  // 0-based
    for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) {
            bool allow;
            const bool qi = i >= P, qj = j >= P;
            if (!qi && !qj) {
                allow = true;  // image <-> image bidirectional
            } else if (!qi) {
                allow = false;  // image tokens never look at latents
            } else if (!qj) {
                allow = true;  // every latent sees all image tokens
            } else {
                const int li = i - P, lj = j - P;
                const int gi = group_of(li), gj = group_of(lj);
                if (gi == gj)
                    allow = (gi == 0) ? (lj <= li) : true;  // first group causal, later bidirectional
                else
                    allow = gj < gi;
            }
            m.set(i, j, allow);
        }
    }
    return m;
}

Tensor trunc_normal_init(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = (float)rng.trunc_normal(stddev);
    return t;
}

void TransformerBlock::init(ParamRegistry& reg, const std::string& p, int width, int h, Rng& rng) {
    heads = h;
    ln1_g = reg.add(p + ".ln1.g", Tensor::full({width}, 1.f));
    ln1_b = reg.add(p + ".ln1.b", Tensor({width}));
    wq = reg.add(p + ".attn.wq", trunc_normal_init({width, width}, rng));
    bq = reg.add(p + ".attn.bq", Tensor({width}));
    wk = reg.add(p + ".attn.wk", trunc_normal_init({width, width}, rng));
    bk = reg.add(p + ".attn.bk", Tensor({width}));
    wv = reg.add(p + ".attn.wv", trunc_normal_init({width, width}, rng));
    bv = reg.add(p + ".attn.bv", Tensor({width}));
    wo = reg.add(p + ".attn.wo", trunc_normal_init({width, width}, rng));
    bo = reg.add(p + ".attn.bo", Tensor({width}));
    ln2_g = reg.add(p + ".ln2.g", Tensor::full({width}, 1.f));
    ln2_b = reg.add(p + ".ln2.b", Tensor({width}));
    w1 = reg.add(p + ".mlp.w1", trunc_normal_init({width, 4 * width}, rng));
    b1 = reg.add(p + ".mlp.b1", Tensor({4 * width}));
    w2 = reg.add(p + ".mlp.w2", trunc_normal_init({4 * width, width}, rng));
    b2 = reg.add(p + ".mlp.b2", Tensor({width}));
}

ag::Var TransformerBlock::forward(const ag::Var& x, const Tensor& mask) const {
    using namespace ag;
    const int B = x->val.dim(0), T = x->val.dim(1), D = x->val.dim(2);
    const int dh = D / heads;

    Var h = layernorm(x, ln1_g, ln1_b);
    auto split = [&](const Var& t) {
        return reshape(permute4(reshape(t, {B, T, heads, dh}), {0, 2, 1, 3}), {B * heads, T, dh});
    };
    Var q = split(linear(h, wq, bq));
    Var k = split(linear(h, wk, bk));
    Var v = split(linear(h, wv, bv));

    Var att = affine(bmm_nt(q, k), 1.f / std::sqrt((float)dh));
    if (mask.defined()) att = add_tail_broadcast(att, mask);
    att = softmax_lastdim(att);
    Var o = bmm(att, v);
    o = reshape(permute4(reshape(o, {B, heads, T, dh}), {0, 2, 1, 3}), {B, T, D});
    Var x1 = add(x, linear(o, wo, bo));

    Var m = layernorm(x1, ln2_g, ln2_b);
    m = linear(gelu(linear(m, w1, b1)), w2, b2);
    return add(x1, m);
}

Tokenizer::Tokenizer(ScheduleConfig s, EncoderConfig e, DecoderConfig d, int K, int dcode,
                     uint64_t seed)
    : sched_(s), enc_cfg_(e), dec_cfg_(d) {
    sched_.validate();
    enc_cfg_.validate(sched_);
    dec_cfg_.validate();
    Rng rng(Rng::derive(seed, 0x70ce));

    patches_per_side_ = sched_.R / enc_cfg_.f_enc;
    const int P = num_image_tokens();
    const int D = enc_cfg_.width;
    const int Dd = dec_cfg_.width;
    if (D != Dd)
        throw std::invalid_argument("tokenizer: encoder and decoder width must match");

    patch_w_ = reg_.add("enc.patch.w", trunc_normal_init({3 * e.f_enc * e.f_enc, D}, rng));
    patch_b_ = reg_.add("enc.patch.b", Tensor({D}));
    pos_img_ = reg_.add("enc.pos_img", trunc_normal_init({P, D}, rng));
    query_tokens_ = reg_.add("enc.query", trunc_normal_init({sched_.N, D}, rng));
    pos_query_ = reg_.add("enc.pos_query", trunc_normal_init({sched_.N, D}, rng));
    enc_blocks_.resize(e.layers);
    for (int l = 0; l < e.layers; ++l)
        enc_blocks_[l].init(reg_, "enc.layers." + std::to_string(l), D, e.heads, rng);
    enc_ln_g_ = reg_.add("enc.ln.g", Tensor::full({D}, 1.f));
    enc_ln_b_ = reg_.add("enc.ln.b", Tensor({D}));
    latent_w_ = reg_.add("enc.latent.w", trunc_normal_init({D, dcode}, rng));
    latent_b_ = reg_.add("enc.latent.b", Tensor({dcode}));
    prefix_w_ = reg_.add("enc.prefix.w", trunc_normal_init({dcode, D}, rng));
    prefix_b_ = reg_.add("enc.prefix.b", Tensor({D}));

    const int grid = sched_.R / sched_.f;
    dec_in_w_ = reg_.add("dec.in.w", trunc_normal_init({dcode, D}, rng));
    dec_in_b_ = reg_.add("dec.in.b", Tensor({D}));
    pos_latent_ = reg_.add("dec.pos_latent", trunc_normal_init({sched_.N, D}, rng));
    mask_seed_ = reg_.add("dec.mask_seed", trunc_normal_init({1, D}, rng));
    pos_grid_ = reg_.add("dec.pos_grid", trunc_normal_init({D, grid, grid}, rng));
    dec_blocks_.resize(d.layers);
    for (int l = 0; l < d.layers; ++l)
        dec_blocks_[l].init(reg_, "dec.layers." + std::to_string(l), D, d.heads, rng);
    dec_ln_g_ = reg_.add("dec.ln.g", Tensor::full({D}, 1.f));
    dec_ln_b_ = reg_.add("dec.ln.b", Tensor({D}));
    pixel_w_ = reg_.add("dec.pixel.w", trunc_normal_init({D, 3 * sched_.f * sched_.f}, rng));
    pixel_b_ = reg_.add("dec.pixel.b", Tensor({3 * sched_.f * sched_.f}));

    Tensor cb_init({K, dcode});
    for (int64_t i = 0; i < cb_init.numel(); ++i) cb_init[i] = (float)rng.uniform(-1.0 / K, 1.0 / K);
    codebook_ = std::make_unique<Codebook>(std::move(cb_init));
    reg_.items.emplace_back("codebook.entries", codebook_->entries());

    enc_mask_additive_ = encoder_mask().additive();
}

ag::Var Tokenizer::encoder_body(const ag::Var& tokens) const {
    ag::Var x = tokens;
    for (const auto& blk : enc_blocks_) x = blk.forward(x, enc_mask_additive_);
    return ag::layernorm(x, enc_ln_g_, enc_ln_b_);
}

ag::Var Tokenizer::encode_hidden_full(const Tensor& images, const Tensor* query_override) const {
    using namespace ag;
    if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != sched_.R ||
        images.dim(3) != sched_.R)
        throw std::invalid_argument("encode: expected [B,3," + std::to_string(sched_.R) + "," +
                                    std::to_string(sched_.R) + "], got " + shape_str(images.shape()));
    const int B = images.dim(0);
    Var patches = linear(patchify(constant(images), enc_cfg_.f_enc), patch_w_, patch_b_);
    patches = add_tail_broadcast(patches, pos_img_);
    Var queries;
    if (query_override) {
        check_shape(*query_override, {sched_.N, enc_cfg_.width}, "query_override");
        queries = add(constant(*query_override), pos_query_);
    } else {
        queries = add(query_tokens_, pos_query_);
    }
    Var x = concat_dim1({patches, tile_batch(queries, B)});
    return encoder_body(x);
}

ag::Var Tokenizer::encode(const Tensor& images, int k, const Tensor* query_override) const {
    const int M = sched_.group_count();
    if (k < 1 || k > M) throw std::out_of_range("encode: k outside [1,M]");
    ag::Var hidden = encode_hidden_full(images, query_override);
    const int P = num_image_tokens();
    return ag::slice_dim1(hidden, P, P + k * sched_.g);
}

ag::Var Tokenizer::latent_head(const ag::Var& hidden) const {
    return ag::linear(hidden, latent_w_, latent_b_);
}

ag::Var Tokenizer::encode_latents(const Tensor& images, int k, const Tensor* query_override) const {
    return latent_head(encode(images, k, query_override));
}

ag::Var Tokenizer::decode(const ag::Var& quantized_prefix, int target_resolution) const {
    using namespace ag;
    if (quantized_prefix->val.ndim() != 3)
        throw std::invalid_argument("decode: prefix must be [B,n,d]");
    const int B = quantized_prefix->val.dim(0);
    const int n = quantized_prefix->val.dim(1);
    if (n < sched_.g) throw std::out_of_range("decode: prefix shorter than one group");
    if (n > sched_.N || n % sched_.g != 0)
        throw std::invalid_argument("decode: prefix length must be a multiple of g up to N");
    if (target_resolution < sched_.f || target_resolution % sched_.f != 0 ||
        target_resolution > sched_.R)
        throw std::invalid_argument("decode: resolution " + std::to_string(target_resolution) +
                                    " not decodable (multiple of f up to R required)");
    const int side = target_resolution / sched_.f;
    const int hw = side * side;

    Var lat = linear(quantized_prefix, dec_in_w_, dec_in_b_);
    lat = add_tail_broadcast(lat, slice_rows2(pos_latent_, 0, n));

    Var grid = bilinear_resize2d(pos_grid_, side, side);  // [D, side, side]
    const int D = dec_cfg_.width;
    grid = reshape(permute4(reshape(grid, {1, D, hw, 1}), {0, 2, 1, 3}), {hw, D});
    Var mask_tokens = add(tile_rows(mask_seed_, hw), grid);

    Var x = concat_dim1({lat, tile_batch(mask_tokens, B)});
    static const Tensor no_mask;  // decoder attention is fully bidirectional
    for (const auto& blk : dec_blocks_) x = blk.forward(x, no_mask);
    x = layernorm(x, dec_ln_g_, dec_ln_b_);
    Var out = slice_dim1(x, n, n + hw);
    out = tanh_act(linear(out, pixel_w_, pixel_b_));
    return unpatchify(out, sched_.f, 3, target_resolution);
}

ag::Var Tokenizer::reencode_with_prefix(const Tensor& images, const ag::Var& clean_prefix,
                                        const ag::Var& noisy_group, int k) const {
    using namespace ag;
    const int g = sched_.g, M = sched_.group_count();
    if (noisy_group->val.dim(1) != g)
        throw std::invalid_argument("reencode: noisy group must contain g tokens");
    const int prefix_len = clean_prefix ? clean_prefix->val.dim(1) : 0;
    const int m = prefix_len / g + 1;
    if (prefix_len != (m - 1) * g)
        throw std::invalid_argument("reencode: clean prefix length must be a multiple of g");
    if (m < 1 || m >= k || k > M)
        throw std::out_of_range("reencode: need 1 <= m < k <= M (m=" + std::to_string(m) +
                                ", k=" + std::to_string(k) + ")");
    const int B = images.dim(0);
    const int P = num_image_tokens();

    Var patches = linear(patchify(constant(images), enc_cfg_.f_enc), patch_w_, patch_b_);
    patches = add_tail_broadcast(patches, pos_img_);

    // Quantized prefix replaces the first m groups of query tokens; the noisy
    // group never receives gradient.
    Var prefix_d = clean_prefix ? concat_dim1({clean_prefix, detach(noisy_group)})
                                : detach(noisy_group);
    Var prefix = linear(prefix_d, prefix_w_, prefix_b_);
    prefix = add_tail_broadcast(prefix, slice_rows2(pos_query_, 0, m * g));

    Var fresh = add(query_tokens_, pos_query_);
    fresh = tile_batch(slice_rows2(fresh, m * g, sched_.N), B);

    Var x = concat_dim1({patches, prefix, fresh});
    Var hidden = encoder_body(x);
    Var corrected = slice_dim1(hidden, P + m * g, P + k * g);
    return latent_head(corrected);
}

}  // namespace df
