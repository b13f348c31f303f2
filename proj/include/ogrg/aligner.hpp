#pragma once

#include "ogrg/nn.hpp"

namespace ogrg {

// Bidirectional cross-attention fusion of the visual(+depth) and language
// streams with zero-initialized tanh gates. With default single-head
// projections the two attention directions follow the published form
// literally: queries from one modality, keys/values from the other, logits
// scaled by the square root of the query dimension.

template <typename S>
struct FusedStage {
    Tensor<S> f_in_vd;   // [C_i, H_i*W_i]
    Tensor<S> f_cross_v; // [C_i, H_i, W_i]
    Tensor<S> f_cross_l; // [L, C_t]
    Tensor<S> f_back_v;  // [C_i, H_i, W_i]
    Tensor<S> f_back_l;  // [L, C_t]
    Tensor<S> f_v;       // [C_i, H_i, W_i]
    Tensor<S> f_l;       // [L, C_t]
};

// Element-wise sum of depth features into the stage-1 visual stream; later
// stages pass the visual features through unchanged.
template <typename S>
Tensor<S> fuse_depth(const Tensor<S>& f_in_v, const Tensor<S>& f_d) {
    if (f_in_v.shape() != f_d.shape())
        throw DimensionError("fuse_depth: " + shape_str(f_in_v.shape()) + " vs " + shape_str(f_d.shape()));
    return add(f_in_v, f_d);
}

template <typename S>
struct BiAlignerStage {
    // visual-query path (projects both modalities to C_i)
    Projection<S> vq, vk, vv;
    // language-query path (projects both modalities to C_t)
    Projection<S> lq, lk, lv;
    Conv2dLayer<S> back_v;  // 1x1 conv on the fused visual map
    Linear<S> back_l;       // per-token linear on the fused language rows
    Tensor<S> gate_v;       // [C_i], zero-initialized
    Tensor<S> gate_l;       // [C_t], zero-initialized
    int heads = 1;
    int c_vis = 0, c_tok = 0;
    bool bidirectional = true;
    bool gated = true;  // false: direct residual sum (ablation)

    BiAlignerStage() = default;
    BiAlignerStage(ParamStore<S>& ps, const std::string& name, int c_i, int c_t, int heads_, Rng& rng)
        : vq(ps, name + ".vq", c_i, c_i, rng),
          vk(ps, name + ".vk", c_t, c_i, rng),
          vv(ps, name + ".vv", c_t, c_i, rng),
          lq(ps, name + ".lq", c_t, c_t, rng),
          lk(ps, name + ".lk", c_i, c_t, rng),
          lv(ps, name + ".lv", c_i, c_t, rng),
          back_v(ps, name + ".back_v", c_i, c_i, 1, 1, rng),
          back_l(ps, name + ".back_l", c_t, c_t, rng),
          heads(heads_),
          c_vis(c_i),
          c_tok(c_t) {
        Rng zero_rng(1);
        gate_v = ps.param(name + ".gate_v", Shape{c_i}, Init::Zeros, zero_rng);
        gate_l = ps.param(name + ".gate_l", Shape{c_t}, Init::Zeros, zero_rng);
        if (c_i % heads_ != 0 || c_t % heads_ != 0)
            throw ParameterError("bi-aligner: head count must divide both attention dims");
    }

    // Queries from spatial positions, keys/values from language tokens.
    // f_vd_flat: [C_i, D], f_l: [L, C_t], key_bias: [L] (0 real, -1e9 pad).
    Tensor<S> cross_attend_visual(const Tensor<S>& f_vd_flat, const Tensor<S>& f_l,
                                  const Tensor<S>& key_bias, int h_i, int w_i) const {
        if (f_vd_flat.ndim() != 2 || f_vd_flat.dim(0) != c_vis || f_vd_flat.dim(1) != h_i * w_i)
            throw DimensionError("cross_attend_visual: expected [C_i, H*W] visual features");
        bool any_key = false;
        for (std::size_t i = 0; i < key_bias.numel(); ++i) any_key = any_key || key_bias[i] == S(0);
        if (!any_key) throw InputError("cross_attend_visual: every language token is masked");

        Tensor<S> q = vq.forward(f_vd_flat);                  // [C_i, D]
        Tensor<S> k = vk.forward(transpose2d(f_l));           // [C_i, L]
        Tensor<S> v = vv.forward(transpose2d(f_l));           // [C_i, L]
        Tensor<S> ctx = attend(q, k, v, &key_bias);           // [D, C_i]
        return reshape(transpose2d(ctx), Shape{c_vis, h_i, w_i});
    }

    // Queries from language tokens, keys/values from spatial positions; pad
    // query rows are zeroed after attention.
    Tensor<S> cross_attend_language(const Tensor<S>& f_l, const Tensor<S>& f_vd_flat,
                                    const Tensor<S>& query_mask) const {
        if (f_vd_flat.ndim() != 2 || f_vd_flat.dim(1) < 1)
            throw InputError("cross_attend_language: feature map has zero area");
        Tensor<S> q = lq.forward(transpose2d(f_l));   // [C_t, L]
        Tensor<S> k = lk.forward(f_vd_flat);          // [C_t, D]
        Tensor<S> v = lv.forward(f_vd_flat);          // [C_t, D]
        Tensor<S> ctx = attend(q, k, v, nullptr);     // [L, C_t]
        return mul_rows(ctx, query_mask);
    }

    // 1x1 conv + ReLU on the visual map, per-token linear + ReLU on the rows.
    std::pair<Tensor<S>, Tensor<S>> project_fused(const Tensor<S>& cross_v, const Tensor<S>& cross_l) const {
        return {relu(back_v.forward(cross_v)), relu(back_l.forward(cross_l))};
    }

    // f = f_in + tanh(gate) * f_back, per channel. Zero gates make the stage
    // an exact identity on both branches.
    std::pair<Tensor<S>, Tensor<S>> gate_merge(const Tensor<S>& f_in_v, const Tensor<S>& f_in_l,
                                               const Tensor<S>& f_back_v, const Tensor<S>& f_back_l) const {
        if (f_in_v.shape() != f_back_v.shape() || f_in_l.shape() != f_back_l.shape())
            throw DimensionError("gate_merge: residual shape mismatch");
        Tensor<S> fv, fl;
        if (gated) {
            const int c = f_in_v.dim(0);
            const std::size_t hw = f_in_v.numel() / static_cast<std::size_t>(c);
            Tensor<S> gv = tanh_op(gate_v);
            Tensor<S> gl = tanh_op(gate_l);
            Tensor<S> scaled_v = reshape(mul_rows(reshape(f_back_v, Shape{c, static_cast<int>(hw)}), gv),
                                         f_back_v.shape());
            fv = add(f_in_v, scaled_v);
            fl = add(f_in_l, mul(f_back_l, gl));
        } else {
            fv = add(f_in_v, f_back_v);
            fl = add(f_in_l, f_back_l);
        }
        return {fv, fl};
    }

    // stage index is 1-based; depth features are only accepted at stage 1.
    FusedStage<S> forward(int stage, const Tensor<S>& f_in_v, const Tensor<S>& f_in_l,
                          const Tensor<S>* f_d, const Tensor<S>& key_bias,
                          const Tensor<S>& query_mask) const {
        if (f_d && stage != 1)
            throw ContractError("bi_align_stage: depth features are only fused at stage 1");
        const int c = f_in_v.dim(0), h = f_in_v.dim(1), w = f_in_v.dim(2);
        FusedStage<S> out;
        Tensor<S> vd = f_d ? fuse_depth(f_in_v, *f_d) : f_in_v;
        out.f_in_vd = reshape(vd, Shape{c, h * w});
        out.f_cross_v = cross_attend_visual(out.f_in_vd, f_in_l, key_bias, h, w);
        if (bidirectional) out.f_cross_l = cross_attend_language(f_in_l, out.f_in_vd, query_mask);
        else out.f_cross_l = Tensor<S>::zeros(f_in_l.shape());
        auto [bv, bl] = project_fused(out.f_cross_v, out.f_cross_l);
        out.f_back_v = bv;
        out.f_back_l = bl;
        auto [fv, fl] = gate_merge(f_in_v, f_in_l, bv, bl);
        out.f_v = fv;
        out.f_l = fl;
        return out;
    }

  private:
    // q: [dq, Nq], k: [dq, Nk], v: [dq, Nk] -> context [Nq, dq]; logits are
    // scaled by 1/sqrt(head dim), softmax runs over the key axis.
    Tensor<S> attend(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                     const Tensor<S>* key_bias) const {
        const int dq = q.dim(0);
        const int dh = dq / heads;
        const S inv = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
        std::vector<Tensor<S>> outs;
        outs.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor<S> qh = heads == 1 ? q : narrow0(q, h * dh, dh);
            Tensor<S> kh = heads == 1 ? k : narrow0(k, h * dh, dh);
            Tensor<S> vh = heads == 1 ? v : narrow0(v, h * dh, dh);
            Tensor<S> logits = scale(matmul(transpose2d(qh), kh), inv);  // [Nq, Nk]
            if (key_bias) logits = add(logits, *key_bias);
            outs.push_back(matmul(softmax_lastdim(logits), transpose2d(vh)));  // [Nq, dh]
        }
        return heads == 1 ? outs[0] : concat_lastdim(outs);
    }
};

}  // namespace ogrg
