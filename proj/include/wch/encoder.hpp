#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wch/common.hpp"
#include "wch/tensor.hpp"

namespace wch {

struct EncoderConfig {
    int64_t n_patches = 16;
    int64_t patch_dim = 192;
    int64_t model_dim = 64;
    int64_t n_layers = 2;
    int64_t n_heads = 4;
    int64_t code_length = 16;
    uint64_t seed = 0;
    bool freeze_position = false;  // position table learnable by default
    bool ste_identity = false;     // clipped straight-through by default

    int64_t ff_dim() const { return 4 * model_dim; }
};

inline void validate(const EncoderConfig& cfg) {
    if (cfg.n_patches <= 0 || cfg.patch_dim <= 0 || cfg.model_dim <= 0 ||
        cfg.n_heads <= 0 || cfg.n_layers < 0)
        throw ConfigError("encoder dimensions must be positive");
    if (cfg.model_dim % cfg.n_heads != 0)
        throw ConfigError("encoder.model_dim (" +
                          std::to_string(cfg.model_dim) +
                          ") is not divisible by encoder.n_heads (" +
                          std::to_string(cfg.n_heads) + ")");
    if (cfg.code_length < 4)
        throw ConfigError("encoder.code_length must be at least 4, got " +
                          std::to_string(cfg.code_length));
}

// Patch encoder: linear patch projection plus a learned position table,
// a stack of pre-norm transformer blocks, and a linear hash head whose
// sign output is trained through the straight-through estimator.
template <typename S>
struct Encoder {
    struct Layer {
        Tensor<S> ln1_g, ln1_b;
        Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<S> ln2_g, ln2_b;
        Tensor<S> w1, b1, w2, b2;
    };

    EncoderConfig cfg;
    Tensor<S> lp_w, lp_b;  // patch projection d -> d_m
    Tensor<S> pos;         // n x d_m position table
    std::vector<Layer> layers;
    Tensor<S> lnf_g, lnf_b;    // closing norm of the block stack (absent
                               // when there are no blocks, so a 0-layer
                               // encoder is exactly the embedding)
    Tensor<S> head_w, head_b;  // hash head d_m -> l

    static Encoder init(const EncoderConfig& cfg) {
        validate(cfg);
        auto rng = make_rng(seed_mix(cfg.seed, 0xE4C0));
        const double sigma = 0.02;
        const int64_t dm = cfg.model_dim;
        Encoder e;
        e.cfg = cfg;
        e.lp_w = Tensor<S>::trunc_normal({cfg.patch_dim, dm}, rng, sigma);
        e.lp_b = Tensor<S>::zeros({dm});
        e.pos = Tensor<S>::trunc_normal({cfg.n_patches, dm}, rng, sigma);
        for (int64_t i = 0; i < cfg.n_layers; ++i) {
            Layer l;
            l.ln1_g = Tensor<S>::full({dm}, S(1));
            l.ln1_b = Tensor<S>::zeros({dm});
            l.wq = Tensor<S>::trunc_normal({dm, dm}, rng, sigma);
            l.bq = Tensor<S>::zeros({dm});
            l.wk = Tensor<S>::trunc_normal({dm, dm}, rng, sigma);
            l.bk = Tensor<S>::zeros({dm});
            l.wv = Tensor<S>::trunc_normal({dm, dm}, rng, sigma);
            l.bv = Tensor<S>::zeros({dm});
            l.wo = Tensor<S>::trunc_normal({dm, dm}, rng, sigma);
            l.bo = Tensor<S>::zeros({dm});
            l.ln2_g = Tensor<S>::full({dm}, S(1));
            l.ln2_b = Tensor<S>::zeros({dm});
            l.w1 = Tensor<S>::trunc_normal({dm, cfg.ff_dim()}, rng, sigma);
            l.b1 = Tensor<S>::zeros({cfg.ff_dim()});
            l.w2 = Tensor<S>::trunc_normal({cfg.ff_dim(), dm}, rng, sigma);
            l.b2 = Tensor<S>::zeros({dm});
            e.layers.push_back(std::move(l));
        }
        if (cfg.n_layers > 0) {
            e.lnf_g = Tensor<S>::full({dm}, S(1));
            e.lnf_b = Tensor<S>::zeros({dm});
        }
        e.head_w = Tensor<S>::trunc_normal({dm, cfg.code_length}, rng, sigma);
        e.head_b = Tensor<S>::zeros({cfg.code_length});
        for (auto& [name, t] : e.params()) {
            (void)name;
            t->set_requires_grad(true);
        }
        if (cfg.freeze_position) e.pos.set_requires_grad(false);
        return e;
    }

    // Ordered parameter enumeration (checkpoint and optimizer order).
    std::vector<std::pair<std::string, Tensor<S>*>> params() {
        std::vector<std::pair<std::string, Tensor<S>*>> out;
        out.emplace_back("lp.w", &lp_w);
        out.emplace_back("lp.b", &lp_b);
        out.emplace_back("pos", &pos);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layer" + std::to_string(i) + ".";
            Layer& l = layers[i];
            out.emplace_back(p + "ln1.g", &l.ln1_g);
            out.emplace_back(p + "ln1.b", &l.ln1_b);
            out.emplace_back(p + "attn.wq", &l.wq);
            out.emplace_back(p + "attn.bq", &l.bq);
            out.emplace_back(p + "attn.wk", &l.wk);
            out.emplace_back(p + "attn.bk", &l.bk);
            out.emplace_back(p + "attn.wv", &l.wv);
            out.emplace_back(p + "attn.bv", &l.bv);
            out.emplace_back(p + "attn.wo", &l.wo);
            out.emplace_back(p + "attn.bo", &l.bo);
            out.emplace_back(p + "ln2.g", &l.ln2_g);
            out.emplace_back(p + "ln2.b", &l.ln2_b);
            out.emplace_back(p + "ff.w1", &l.w1);
            out.emplace_back(p + "ff.b1", &l.b1);
            out.emplace_back(p + "ff.w2", &l.w2);
            out.emplace_back(p + "ff.b2", &l.b2);
        }
        if (cfg.n_layers > 0) {
            out.emplace_back("lnf.g", &lnf_g);
            out.emplace_back("lnf.b", &lnf_b);
        }
        out.emplace_back("head.w", &head_w);
        out.emplace_back("head.b", &head_b);
        return out;
    }

    // Patch projection plus position table; no class token.
    Tensor<S> embed(const Tensor<S>& patches) const {
        if (patches.rank() != 3 || patches.dim(1) != cfg.n_patches ||
            patches.dim(2) != cfg.patch_dim)
            throw DimensionError(
                "embed: expected [batch, " + std::to_string(cfg.n_patches) +
                ", " + std::to_string(cfg.patch_dim) + "], got " +
                shape_str(patches.shape()));
        const int64_t bs = patches.dim(0);
        Tensor<S> flat =
            reshape(patches, {bs * cfg.n_patches, cfg.patch_dim});
        Tensor<S> proj = add_bias(matmul(flat, lp_w), lp_b);
        return add_position(reshape(proj, {bs, cfg.n_patches, cfg.model_dim}),
                            pos);
    }

    Tensor<S> encode(const Tensor<S>& patches) const {
        Tensor<S> x = embed(patches);
        if (!x.all_finite())
            throw NumericError("encode: non-finite activation after embedding");
        for (size_t i = 0; i < layers.size(); ++i) {
            x = block(x, layers[i]);
            if (!x.all_finite())
                throw NumericError("encode: non-finite activation after layer " +
                                   std::to_string(i));
        }
        if (cfg.n_layers > 0) x = layer_norm(x, lnf_g, lnf_b);
        return x;
    }

    // Mean over patches, linear projection, then sign with STE backward.
    // Returns (codes in {-1,+1}, real-valued pre-codes).
    std::pair<Tensor<S>, Tensor<S>> hash(const Tensor<S>& features) const {
        if (features.rank() != 3 || features.dim(2) != cfg.model_dim)
            throw DimensionError("hash: expected [batch, n, " +
                                 std::to_string(cfg.model_dim) + "], got " +
                                 shape_str(features.shape()));
        Tensor<S> pooled = reduce(features, 1, Reduce::Mean);
        Tensor<S> pre = add_bias(matmul(pooled, head_w), head_b);
        Tensor<S> codes = ste_sign(
            pre, cfg.ste_identity ? SteMode::Identity : SteMode::Clipped);
        return {codes, pre};
    }

private:
    Tensor<S> block(const Tensor<S>& x, const Layer& l) const {
        const int64_t bs = x.dim(0), n = x.dim(1), dm = cfg.model_dim;
        const int64_t h = cfg.n_heads, dh = dm / h;

        Tensor<S> normed = layer_norm(x, l.ln1_g, l.ln1_b);
        Tensor<S> flat = reshape(normed, {bs * n, dm});
        Tensor<S> q = split_heads(add_bias(matmul(flat, l.wq), l.bq), bs, n);
        Tensor<S> k = split_heads(add_bias(matmul(flat, l.wk), l.bk), bs, n);
        Tensor<S> v = split_heads(add_bias(matmul(flat, l.wv), l.bv), bs, n);

        Tensor<S> scores =
            scale(bmm(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
        Tensor<S> attn = softmax_lastaxis(scores);
        Tensor<S> ctx = merge_heads(bmm(attn, v), bs, n);
        Tensor<S> attended =
            add_bias(matmul(ctx, l.wo), l.bo);  // [bs*n, dm]
        Tensor<S> x1 = add(x, reshape(attended, {bs, n, dm}));

        Tensor<S> normed2 = layer_norm(x1, l.ln2_g, l.ln2_b);
        Tensor<S> flat2 = reshape(normed2, {bs * n, dm});
        Tensor<S> hidden = gelu(add_bias(matmul(flat2, l.w1), l.b1));
        Tensor<S> ff = add_bias(matmul(hidden, l.w2), l.b2);
        return add(x1, reshape(ff, {bs, n, dm}));
    }

    // [bs*n, dm] -> [bs*heads, n, dh]
    Tensor<S> split_heads(const Tensor<S>& t, int64_t bs, int64_t n) const {
        const int64_t h = cfg.n_heads, dh = cfg.model_dim / h;
        return reshape(permute(reshape(t, {bs, n, h, dh}), {0, 2, 1, 3}),
                       {bs * h, n, dh});
    }

    // [bs*heads, n, dh] -> [bs*n, dm]
    Tensor<S> merge_heads(const Tensor<S>& t, int64_t bs, int64_t n) const {
        const int64_t h = cfg.n_heads, dh = cfg.model_dim / h;
        return reshape(permute(reshape(t, {bs, h, n, dh}), {0, 2, 1, 3}),
                       {bs * n, cfg.model_dim});
    }
};

}  // namespace wch
