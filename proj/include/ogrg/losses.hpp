#pragma once

#include "ogrg/ops.hpp"

// Task losses. Targets are plain data (no gradient); each loss is a scalar
// tensor wired into the tape through an analytic backward rule.

namespace ogrg {

template <typename S>
inline S smooth_l1_value(S d) {
    const S a = std::abs(d);
    return a < S(1) ? S(0.5) * d * d : a - S(0.5);
}

template <typename S>
inline S smooth_l1_slope(S d) {
    if (d > S(1)) return S(1);
    if (d < S(-1)) return S(-1);
    return d;
}

// Mean smooth-L1 over elements where the spatial mask is positive; the mask
// is [H,W] and broadcasts over leading channels. Empty mask -> zero loss.
template <typename S>
Tensor<S> smooth_l1_masked(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& mask) {
    if (pred.shape() != target.shape())
        throw DimensionError("smooth_l1: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.shape()));
    const std::size_t plane = mask.numel();
    if (plane == 0 || pred.numel() % plane != 0)
        throw DimensionError("smooth_l1: mask " + shape_str(mask.shape()) + " does not tile " +
                             shape_str(pred.shape()));
    const auto& pv = pred.values();
    const auto& tv = target.values();
    const auto& mv = mask.values();
    double acc = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const S wgt = mv[i % plane];
        if (wgt <= S(0)) continue;
        acc += static_cast<double>(wgt) * smooth_l1_value(pv[i] - tv[i]);
        wsum += static_cast<double>(wgt);
    }
    const S denom = wsum > 0.0 ? static_cast<S>(wsum) : S(1);
    Tensor<S> y = Tensor<S>::scalar(static_cast<S>(acc) / denom);
    if (grad_enabled_for(pred)) {
        y.set_requires_grad(true);
        auto pd = pred.data_ptr();
        auto td = target.data_ptr();
        auto md = mask.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([pd, td, md, yd, plane, denom] {
            if (!detail::grad_pending(yd)) return;
            pd->ensure_grad();
            const S g = yd->grad[0] / denom;
            for (std::size_t i = 0; i < pd->value.size(); ++i) {
                const S wgt = md->value[i % plane];
                if (wgt <= S(0)) continue;
                pd->grad[i] += g * wgt * smooth_l1_slope(pd->value[i] - td->value[i]);
            }
            detail::consume(yd);
        });
    }
    return y;
}

// Mean two-class cross entropy on [2,H,W] logits against a {0,1} label map.
template <typename S>
Tensor<S> softmax_ce2(const Tensor<S>& logits, const std::vector<std::uint8_t>& target) {
    if (logits.ndim() != 3 || logits.dim(0) != 2)
        throw DimensionError("softmax_ce2: expected [2,H,W] logits, got " + shape_str(logits.shape()));
    const std::size_t n = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
    if (target.size() != n) throw DimensionError("softmax_ce2: target size mismatch");
    const auto& zv = logits.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const S z0 = zv[i], z1 = zv[n + i];
        const S m = std::max(z0, z1);
        const S lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
        acc += static_cast<double>(lse - (target[i] ? z1 : z0));
    }
    Tensor<S> y = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
    if (grad_enabled_for(logits)) {
        y.set_requires_grad(true);
        auto zd = logits.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([zd, yd, target, n] {
            if (!detail::grad_pending(yd)) return;
            zd->ensure_grad();
            const S g = yd->grad[0] / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const S z0 = zd->value[i], z1 = zd->value[n + i];
                const S m = std::max(z0, z1);
                const S e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
                const S p1 = e1 / (e0 + e1);
                const S t = target[i] ? S(1) : S(0);
                zd->grad[i] += g * ((S(1) - p1) - (S(1) - t));
                zd->grad[n + i] += g * (p1 - t);
            }
            detail::consume(yd);
        });
    }
    return y;
}

// Dice loss over a foreground probability map: 1 - (2*sum(p*t)+s)/(sum(p)+sum(t)+s).
template <typename S>
Tensor<S> dice_loss(const Tensor<S>& probs, const std::vector<std::uint8_t>& target, S smooth = S(1)) {
    if (probs.numel() != target.size()) throw DimensionError("dice_loss: size mismatch");
    const auto& pv = probs.values();
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        psum += static_cast<double>(pv[i]);
        if (target[i]) {
            inter += static_cast<double>(pv[i]);
            tsum += 1.0;
        }
    }
    const double denom = psum + tsum + static_cast<double>(smooth);
    const double num = 2.0 * inter + static_cast<double>(smooth);
    Tensor<S> y = Tensor<S>::scalar(static_cast<S>(1.0 - num / denom));
    if (grad_enabled_for(probs)) {
        y.set_requires_grad(true);
        auto pd = probs.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([pd, yd, target, denom, num] {
            if (!detail::grad_pending(yd)) return;
            pd->ensure_grad();
            const S g = yd->grad[0];
            // d/dp_i [ -num/denom ] = -(2*t_i*denom - num) / denom^2
            const S inv2 = static_cast<S>(1.0 / (denom * denom));
            for (std::size_t i = 0; i < pd->value.size(); ++i) {
                const double ti = target[i] ? 2.0 : 0.0;
                pd->grad[i] += g * static_cast<S>(-(ti * denom - num)) * inv2;
            }
            detail::consume(yd);
        });
    }
    return y;
}

// Focal loss on [2,H,W] logits: alpha * mean[(1-p_t)^gamma * (-log p_t)].
// With gamma=0, alpha=1 this is exactly the mean cross entropy.
template <typename S>
Tensor<S> focal_ce2(const Tensor<S>& logits, const std::vector<std::uint8_t>& target, S gamma, S alpha) {
    if (logits.ndim() != 3 || logits.dim(0) != 2)
        throw DimensionError("focal_ce2: expected [2,H,W] logits");
    const std::size_t n = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
    if (target.size() != n) throw DimensionError("focal_ce2: target size mismatch");
    const auto& zv = logits.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const S z0 = zv[i], z1 = zv[n + i];
        const S m = std::max(z0, z1);
        const S e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
        const S pt = (target[i] ? e1 : e0) / (e0 + e1);
        const S q = S(1) - pt;
        const S w = gamma == S(0) ? S(1) : std::pow(q, gamma);
        acc += static_cast<double>(w * -std::log(std::max(pt, S(1e-12))));
    }
    Tensor<S> y = Tensor<S>::scalar(alpha * static_cast<S>(acc / static_cast<double>(n)));
    if (grad_enabled_for(logits)) {
        y.set_requires_grad(true);
        auto zd = logits.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([zd, yd, target, n, gamma, alpha] {
            if (!detail::grad_pending(yd)) return;
            zd->ensure_grad();
            const S g = yd->grad[0] * alpha / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const S z0 = zd->value[i], z1 = zd->value[n + i];
                const S m = std::max(z0, z1);
                const S e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
                const S p1 = e1 / (e0 + e1);
                const S pt = target[i] ? p1 : S(1) - p1;
                const S q = S(1) - pt;
                const S logp = std::log(std::max(pt, S(1e-12)));
                // d/dpt [(1-pt)^gamma * (-log pt)]
                S df;
                if (gamma == S(0)) {
                    df = -S(1) / std::max(pt, S(1e-12));
                } else {
                    df = gamma * std::pow(q, gamma - S(1)) * logp - std::pow(q, gamma) / std::max(pt, S(1e-12));
                }
                const S dz_t = df * pt * (S(1) - pt);
                if (target[i]) {
                    zd->grad[n + i] += g * dz_t;
                    zd->grad[i] -= g * dz_t;
                } else {
                    zd->grad[i] += g * dz_t;
                    zd->grad[n + i] -= g * dz_t;
                }
            }
            detail::consume(yd);
        });
    }
    return y;
}

// Foreground probability of a 2-channel logit map as a [H,W] tensor
// (softmax over two classes reduces to a sigmoid of the logit difference).
template <typename S>
Tensor<S> foreground_prob(const Tensor<S>& logits2) {
    if (logits2.ndim() != 3 || logits2.dim(0) != 2)
        throw DimensionError("foreground_prob: expected [2,H,W]");
    const int h = logits2.dim(1), w = logits2.dim(2);
    Tensor<S> diff = sub(narrow0(logits2, 1, 1), narrow0(logits2, 0, 1));
    return reshape(sigmoid(diff), Shape{h, w});
}

struct RgsLossWeights {
    double w_mask = 1.0;
    double w_quality = 1.0;
    double w_angle = 1.0;
    double w_width = 1.0;
};

// Dense targets for one sample, rendered at network resolution.
template <typename S>
struct RgsTargets {
    std::vector<std::uint8_t> mask;  // H*W, {0,1}
    Tensor<S> quality;               // [H,W]
    Tensor<S> angle;                 // [2,H,W] (sin 2t, cos 2t)
    Tensor<S> width;                 // [H,W], already divided by max width
    Tensor<S> grasp_region;          // [H,W] mask where angle/width are supervised
};

template <typename S>
Tensor<S> rgs_loss(const Tensor<S>& m_logits, const Tensor<S>& q_map, const Tensor<S>& theta_map,
                   const Tensor<S>& p_map, const RgsTargets<S>& t, const RgsLossWeights& w = {}) {
    Tensor<S> ones = Tensor<S>::full(Shape{q_map.dim(0), q_map.dim(1)}, S(1));
    Tensor<S> total = scale(softmax_ce2(m_logits, t.mask), static_cast<S>(w.w_mask));
    total = add(total, scale(smooth_l1_masked(q_map, t.quality, ones), static_cast<S>(w.w_quality)));
    total = add(total, scale(smooth_l1_masked(theta_map, t.angle, t.grasp_region), static_cast<S>(w.w_angle)));
    total = add(total, scale(smooth_l1_masked(p_map, t.width, t.grasp_region), static_cast<S>(w.w_width)));
    return total;
}

template <typename S>
Tensor<S> rga_grounding_loss(const Tensor<S>& m_logits, const std::vector<std::uint8_t>& target,
                             S focal_gamma = S(2), S focal_alpha = S(0.25), S dice_smooth = S(1)) {
    for (std::uint8_t v : target)
        if (v > 1) throw InputError("rga_grounding_loss: target mask must be binary");
    Tensor<S> d = dice_loss(foreground_prob(m_logits), target, dice_smooth);
    Tensor<S> f = focal_ce2(m_logits, target, focal_gamma, focal_alpha);
    return add(d, f);
}

}  // namespace ogrg
