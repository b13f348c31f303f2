#pragma once

#include "ogrg/aligner.hpp"
#include "ogrg/decoder.hpp"
#include "ogrg/encoders.hpp"

namespace ogrg {

enum class TaskMode { Rgs, Rga };

inline TaskMode task_mode_from_string(const std::string& s) {
    if (s == "rgs") return TaskMode::Rgs;
    if (s == "rga") return TaskMode::Rga;
    throw ParameterError("unknown task mode: " + s);
}

// Full grounding model: three backbones, one bi-aligner per stage, FCN
// decoder and task heads. RGS decodes from the gated branch outputs f_v^i;
// RGA decodes from the fused features f_back_v^i.
template <typename S>
struct OgrgModel {
    BackboneConfig cfg;
    TaskMode mode = TaskMode::Rgs;
    int input_size = 0;
    ParamStore<S> params;

    VisualBackbone<S> visual;
    LanguageBackbone<S> language;
    DepthBackbone<S> depth;
    std::vector<BiAlignerStage<S>> aligners;
    FcnDecoder<S> decoder;
    TaskHeads<S> heads;

    OgrgModel(const BackboneConfig& cfg_, TaskMode mode_, int input_size_, std::uint64_t seed)
        : cfg(cfg_), mode(mode_), input_size(input_size_) {
        cfg.validate();
        Rng rng(seed);
        visual = VisualBackbone<S>(params, "visual", cfg, input_size, rng);
        language = LanguageBackbone<S>(params, "language", cfg, rng);
        depth = DepthBackbone<S>(params, "depth", cfg, rng);
        for (int i = 0; i < 4; ++i)
            aligners.emplace_back(params, "aligner" + std::to_string(i + 1),
                                  cfg.channels[static_cast<std::size_t>(i)], cfg.token_dim,
                                  cfg.aligner_heads, rng);
        decoder = FcnDecoder<S>(params, "decoder", cfg.channels, rng);
        heads = TaskHeads<S>(params, "heads", cfg.channels[0], rng);
    }

    struct ForwardTrace {
        std::array<Tensor<S>, 4> f_in_v, f_v, f_back_v, f_in_l, f_l;
        Tensor<S> y1;
    };

    // image: [3,H,W] standardized; depth_map: [1,H,W] normalized.
    ForwardTrace trace(const Tensor<S>& image, const Tensor<S>& depth_map, const std::vector<int>& ids,
                       const std::vector<float>& mask, bool train) const {
        typename LanguageBackbone<S>::Masks lm = language.make_masks(mask);
        Tensor<S> lx = language.embed_input(ids, lm);
        Tensor<S> fd = depth.forward(depth_map, train);

        ForwardTrace t;
        auto fuse = [&](int i, const Tensor<S>& f_in_v) -> Tensor<S> {
            lx = language.run_group(i, lx, lm);
            t.f_in_l[static_cast<std::size_t>(i)] = lx;
            FusedStage<S> st = aligners[static_cast<std::size_t>(i)].forward(
                i + 1, f_in_v, lx, i == 0 ? &fd : nullptr, lm.key_bias, lm.mask01);
            t.f_v[static_cast<std::size_t>(i)] = st.f_v;
            t.f_back_v[static_cast<std::size_t>(i)] = st.f_back_v;
            t.f_l[static_cast<std::size_t>(i)] = st.f_l;
            if (cfg.feed_language_back) lx = st.f_l;
            return st.f_v;
        };
        std::vector<Tensor<S>> f_in = visual.forward(image, fuse);
        for (int i = 0; i < 4; ++i) t.f_in_v[static_cast<std::size_t>(i)] = f_in[static_cast<std::size_t>(i)];

        const auto& v = mode == TaskMode::Rgs ? t.f_v : t.f_back_v;
        t.y1 = decoder.forward(v, train);
        return t;
    }

    RgsMaps<S> forward_rgs(const Tensor<S>& image, const Tensor<S>& depth_map, const std::vector<int>& ids,
                           const std::vector<float>& mask, bool train) const {
        if (mode != TaskMode::Rgs) throw ContractError("forward_rgs called on an RGA model");
        return heads.rgs(trace(image, depth_map, ids, mask, train).y1);
    }

    // Grounding mask logits [2,H,W].
    Tensor<S> forward_rga(const Tensor<S>& image, const Tensor<S>& depth_map, const std::vector<int>& ids,
                          const std::vector<float>& mask, bool train) const {
        if (mode != TaskMode::Rga) throw ContractError("forward_rga called on an RGS model");
        return heads.rga(trace(image, depth_map, ids, mask, train).y1);
    }
};

// Binary mask from 2-channel logits by per-pixel argmax.
template <typename S>
std::vector<std::uint8_t> mask_from_logits(const Tensor<S>& logits) {
    if (logits.ndim() != 3 || logits.dim(0) != 2) throw DimensionError("mask_from_logits: expected [2,H,W]");
    const std::size_t n = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
    std::vector<std::uint8_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = logits.values()[n + i] > logits.values()[i] ? 1 : 0;
    return out;
}

}  // namespace ogrg
