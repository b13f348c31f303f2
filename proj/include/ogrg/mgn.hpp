#pragma once

#include "ogrg/losses.hpp"
#include "ogrg/nn.hpp"
#include "ogrg/grasp_geometry.hpp"

namespace ogrg {

// Mask-conditioned grasping network. The 5-channel stack (RGB, normalized
// depth, binary mask) is rotated by +theta_k, pushed through a shared
// residual encoder and FCN grasp head, and the sigmoid output is rotated
// back by -theta_k into affordance channel k. The per-angle predictor is
// symmetrized over 180-degree rotation (jaws are symmetric), which makes the
// whole stack equivariant to lattice rotations of the scene.

constexpr int kMgnRotations = 6;
constexpr double kMgnBinRad = 3.141592653589793 / kMgnRotations;  // 30 degrees

inline double mgn_rotation_angle(int k) { return k * kMgnBinRad; }

template <typename S>
struct MgnModel {
    ParamStore<S> params;
    ConvBnRelu<S> stem;
    ResidualBlock<S> res1, res2;
    ConvBnRelu<S> head1;
    Conv2dLayer<S> head2;

    explicit MgnModel(std::uint64_t seed, int base_channels = 16) {
        Rng rng(seed);
        stem = ConvBnRelu<S>(params, "mgn.stem", 5, base_channels, 7, 2, rng);
        res1 = ResidualBlock<S>(params, "mgn.res1", base_channels, base_channels * 2, 2, rng);
        res2 = ResidualBlock<S>(params, "mgn.res2", base_channels * 2, base_channels * 2, 1, rng);
        head1 = ConvBnRelu<S>(params, "mgn.head1", base_channels * 2, base_channels * 2, 3, 1, rng);
        head2 = Conv2dLayer<S>(params, "mgn.head2", base_channels * 2, 1, 1, 1, rng);
    }

    // Raw single-angle logits at input resolution, symmetrized over 180 deg.
    Tensor<S> single_logits(const Tensor<S>& stack5, bool train) const {
        Tensor<S> direct = backbone(stack5, train);
        Tensor<S> flipped = rotate180(backbone(rotate180(stack5), train));
        return scale(add(direct, flipped), S(0.5));
    }

    // Probability map [H,W] for one rotation bin on an already-rotated stack.
    Tensor<S> single_prob(const Tensor<S>& stack5, bool train) const {
        Tensor<S> p = sigmoid(single_logits(stack5, train));
        return reshape(p, Shape{p.dim(1), p.dim(2)});
    }

  private:
    Tensor<S> backbone(const Tensor<S>& x, bool train) const {
        Tensor<S> h = stem.forward(x, train);   // H/2
        h = res1.forward(h, train);             // H/4
        h = res2.forward(h, train);
        h = head1.forward(h, train);
        return bilinear_upsample(head2.forward(h), 4);  // [1,H,W]
    }
};

// Per-channel out-of-frame fill: mean color for RGB, border median for
// depth, zero for the mask channel.
template <typename S>
std::vector<S> mgn_rotation_fill(const Tensor<S>& stack5) {
    if (stack5.ndim() != 3 || stack5.dim(0) != 5) throw DimensionError("mgn: expected [5,H,W] stack");
    const int h = stack5.dim(1), w = stack5.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<S> fill(5, S(0));
    for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += stack5.values()[c * plane + i];
        fill[static_cast<std::size_t>(c)] = static_cast<S>(acc / static_cast<double>(plane));
    }
    std::vector<S> border;
    border.reserve(static_cast<std::size_t>(2 * (h + w)));
    const S* d = stack5.values().data() + 3 * plane;
    for (int x = 0; x < w; ++x) {
        border.push_back(d[x]);
        border.push_back(d[static_cast<std::size_t>(h - 1) * w + x]);
    }
    for (int y = 1; y + 1 < h; ++y) {
        border.push_back(d[static_cast<std::size_t>(y) * w]);
        border.push_back(d[static_cast<std::size_t>(y) * w + w - 1]);
    }
    std::sort(border.begin(), border.end());
    fill[3] = border[border.size() / 2];
    fill[4] = S(0);
    return fill;
}

// Input stack assembly; the mask channel must be binary.
template <typename S>
Tensor<S> mgn_input_stack(const Tensor<S>& image, const Tensor<S>& depth_norm, const Tensor<S>& mask) {
    if (image.ndim() != 3 || image.dim(0) != 3 || depth_norm.ndim() != 3 || depth_norm.dim(0) != 1 ||
        mask.ndim() != 3 || mask.dim(0) != 1)
        throw DimensionError("mgn: expected [3,H,W] image, [1,H,W] depth and mask");
    if (image.dim(1) != depth_norm.dim(1) || image.dim(1) != mask.dim(1) ||
        image.dim(2) != depth_norm.dim(2) || image.dim(2) != mask.dim(2))
        throw DimensionError("mgn: input spatial sizes disagree");
    for (S v : mask.values())
        if (std::abs(v) > S(1e-6) && std::abs(v - S(1)) > S(1e-6))
            throw InputError("mgn: mask channel must be binary");
    return concat0<S>({image, depth_norm, mask});
}

// Full affordance stack [N,H,W]; inference path, no gradients recorded.
template <typename S>
Tensor<S> mgn_forward(const MgnModel<S>& model, const Tensor<S>& image, const Tensor<S>& depth_norm,
                      const Tensor<S>& mask) {
    NoGrad<S> ng;
    Tensor<S> stack = mgn_input_stack(image, depth_norm, mask);
    const std::vector<S> fill = mgn_rotation_fill(stack);
    const int h = stack.dim(1), w = stack.dim(2);
    Tensor<S> out(Shape{kMgnRotations, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int k = 0; k < kMgnRotations; ++k) {
        const double ang = mgn_rotation_angle(k);
        Tensor<S> rotated = k == 0 ? stack : rotate_bilinear(stack, ang, fill);
        Tensor<S> prob = model.single_prob(rotated, false);
        Tensor<S> prob3 = reshape(prob, Shape{1, h, w});
        Tensor<S> back = k == 0 ? prob3 : rotate_bilinear(prob3, -ang, std::vector<S>{S(0)});
        std::memcpy(out.values().data() + static_cast<std::size_t>(k) * plane, back.values().data(),
                    plane * sizeof(S));
    }
    return out;
}

// Binary cross entropy at the single labeled cell; every other cell of the
// stack contributes nothing (and receives no gradient).
template <typename S>
Tensor<S> motion_loss(const Tensor<S>& affordance, int x, int y, int k, int label) {
    if (affordance.ndim() != 3 || affordance.dim(0) != kMgnRotations)
        throw DimensionError("motion_loss: expected [N,H,W] affordance stack");
    const int h = affordance.dim(1), w = affordance.dim(2);
    if (x < 0 || x >= w || y < 0 || y >= h || k < 0 || k >= kMgnRotations)
        throw InputError("motion_loss: labeled cell outside the stack");
    const std::size_t idx = (static_cast<std::size_t>(k) * h + y) * w + x;
    const S p = affordance.values()[idx];
    const S pc = std::clamp(p, S(1e-7), S(1) - S(1e-7));
    const S l = label ? -std::log(pc) : -std::log(S(1) - pc);
    Tensor<S> out = Tensor<S>::scalar(l);
    if (grad_enabled_for(affordance)) {
        out.set_requires_grad(true);
        auto ad = affordance.data_ptr();
        auto od = out.data_ptr();
        Tape<S>::current()->record([ad, od, idx, label] {
            if (od->grad.empty()) return;
            ad->ensure_grad();
            const S p2 = std::clamp(ad->value[idx], S(1e-7), S(1) - S(1e-7));
            const S dldp = label ? -S(1) / p2 : S(1) / (S(1) - p2);
            ad->grad[idx] += od->grad[0] * dldp;
            std::fill(od->grad.begin(), od->grad.end(), S(0));
        });
    }
    return out;
}

// Scalar BCE against a probability scalar (the fast single-rotation
// training path samples the probability map at the rotated label position).
template <typename S>
Tensor<S> bce_scalar(const Tensor<S>& prob, int label) {
    if (prob.numel() != 1) throw DimensionError("bce_scalar: expected a scalar probability");
    const S p = std::clamp(prob[0], S(1e-7), S(1) - S(1e-7));
    Tensor<S> out = Tensor<S>::scalar(label ? -std::log(p) : -std::log(S(1) - p));
    if (grad_enabled_for(prob)) {
        out.set_requires_grad(true);
        auto pd = prob.data_ptr();
        auto od = out.data_ptr();
        Tape<S>::current()->record([pd, od, label] {
            if (od->grad.empty()) return;
            pd->ensure_grad();
            const S p2 = std::clamp(pd->value[0], S(1e-7), S(1) - S(1e-7));
            pd->grad[0] += od->grad[0] * (label ? -S(1) / p2 : S(1) / (S(1) - p2));
            std::fill(od->grad.begin(), od->grad.end(), S(0));
        });
    }
    return out;
}

// Training loss through one rotation only: mathematically identical to
// motion_loss over the full stack, at a sixth of the forward cost.
template <typename S>
Tensor<S> mgn_training_loss(const MgnModel<S>& model, const Tensor<S>& image, const Tensor<S>& depth_norm,
                            const Tensor<S>& mask, int x, int y, int k, int label, bool train) {
    Tensor<S> stack = mgn_input_stack(image, depth_norm, mask);
    const std::vector<S> fill = mgn_rotation_fill(stack);
    const double ang = mgn_rotation_angle(k);
    Tensor<S> rotated = k == 0 ? stack : rotate_bilinear(stack, ang, fill);
    Tensor<S> prob = model.single_prob(rotated, train);
    const RotGeom g = rotation_geometry(stack.dim(1), stack.dim(2), ang);
    double px = x, py = y;
    if (k != 0) rotate_point_forward(x, y, g, px, py);
    Tensor<S> sampled = bilinear_sample_at(prob, px, py, S(0));
    return bce_scalar(sampled, label);
}

// Global argmax over the affordance stack; ties break toward the smallest
// (k, y, x). z reads the metric depth map, l is the fixed RGA opening.
template <typename S>
GraspPose extract_rga_pose(const Tensor<S>& affordance, const std::vector<float>& depth_m,
                           double fixed_width) {
    if (affordance.ndim() != 3 || affordance.dim(0) != kMgnRotations)
        throw DimensionError("extract_rga_pose: expected [N,H,W] stack");
    const int h = affordance.dim(1), w = affordance.dim(2);
    if (depth_m.size() != static_cast<std::size_t>(h) * w)
        throw DimensionError("extract_rga_pose: depth size mismatch");
    for (S v : affordance.values())
        if (std::isnan(static_cast<double>(v))) throw NumericError("extract_rga_pose: NaN affordance");

    int bk = 0, by = 0, bx = 0;
    S best = affordance.values()[0];
    for (int k = 0; k < kMgnRotations; ++k)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const S v = affordance.at(k, y, x);
                if (v > best) {
                    best = v;
                    bk = k;
                    by = y;
                    bx = x;
                }
            }
    GraspPose p;
    p.x = bx;
    p.y = by;
    double deg = bk * 30.0;
    if (deg > 90.0) deg -= 180.0;
    p.theta = deg * 3.141592653589793 / 180.0;
    p.l = fixed_width;
    p.z = depth_m[static_cast<std::size_t>(by) * w + bx];
    p.score = static_cast<double>(best);
    return p;
}

}  // namespace ogrg
