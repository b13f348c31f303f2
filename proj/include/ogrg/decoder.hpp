#pragma once

#include "ogrg/nn.hpp"

namespace ogrg {

// Light-weight FCN head: top-down decode of the four stage features.
//   Y_4 = V_4,  Y_i = Conv3x3(concat(Up2(Y_{i+1}), V_i)) -> BN -> ReLU
// Y_1 lands at stage-1 resolution (input/4); the task heads are 1x1 convs
// whose logits are upsampled x4 back to input resolution before the output
// activations.

template <typename S>
struct FcnDecoder {
    std::array<ConvBnRelu<S>, 3> convs;  // index i decodes into stage i+1 (0-based stages 2,1,0)

    FcnDecoder() = default;
    FcnDecoder(ParamStore<S>& ps, const std::string& name, const std::array<int, 4>& channels, Rng& rng) {
        for (int i = 0; i < 3; ++i)
            convs[static_cast<std::size_t>(i)] =
                ConvBnRelu<S>(ps, name + ".dec" + std::to_string(i + 1),
                              channels[static_cast<std::size_t>(i + 1)] + channels[static_cast<std::size_t>(i)],
                              channels[static_cast<std::size_t>(i)], 3, 1, rng);
    }

    Tensor<S> forward(const std::array<Tensor<S>, 4>& v, bool train) const {
        for (int i = 0; i < 3; ++i) {
            if (v[static_cast<std::size_t>(i)].dim(1) != 2 * v[static_cast<std::size_t>(i + 1)].dim(1))
                throw DimensionError("fcn_decode: stage " + std::to_string(i + 1) + " is not half the size of stage " +
                                     std::to_string(i));
        }
        Tensor<S> y = v[3];
        for (int i = 2; i >= 0; --i) {
            Tensor<S> up = bilinear_upsample(y, 2);
            y = convs[static_cast<std::size_t>(i)].forward(concat0<S>({up, v[static_cast<std::size_t>(i)]}), train);
        }
        return y;
    }
};

template <typename S>
struct RgsMaps {
    Tensor<S> m_logits;  // [2,H,W]
    Tensor<S> quality;   // [H,W] in (0,1)
    Tensor<S> angle;     // [2,H,W] (sin 2t, cos 2t) in (-1,1)
    Tensor<S> width;     // [H,W] in (0,1), fraction of max gripper width
};

template <typename S>
struct TaskHeads {
    Conv2dLayer<S> m_head, q_head, theta_head, p_head;

    TaskHeads() = default;
    TaskHeads(ParamStore<S>& ps, const std::string& name, int c1, Rng& rng)
        : m_head(ps, name + ".m", c1, 2, 1, 1, rng),
          q_head(ps, name + ".q", c1, 1, 1, 1, rng),
          theta_head(ps, name + ".theta", c1, 2, 1, 1, rng),
          p_head(ps, name + ".p", c1, 1, 1, 1, rng) {}

    RgsMaps<S> rgs(const Tensor<S>& y1) const {
        RgsMaps<S> out;
        out.m_logits = bilinear_upsample(m_head.forward(y1), 4);
        Tensor<S> q = sigmoid(bilinear_upsample(q_head.forward(y1), 4));
        out.quality = reshape(q, Shape{q.dim(1), q.dim(2)});
        out.angle = tanh_op(bilinear_upsample(theta_head.forward(y1), 4));
        Tensor<S> p = sigmoid(bilinear_upsample(p_head.forward(y1), 4));
        out.width = reshape(p, Shape{p.dim(1), p.dim(2)});
        return out;
    }

    // Grounding-only head; identical to the RGS mask branch.
    Tensor<S> rga(const Tensor<S>& y1) const { return bilinear_upsample(m_head.forward(y1), 4); }
};

// Half-angle decode of the (sin 2t, cos 2t) representation; result is in
// (-pi/2, pi/2].
inline double decode_angle(double sin2t, double cos2t) {
    double theta = 0.5 * std::atan2(sin2t, cos2t);
    if (theta <= -1.5707963267948966) theta += 3.141592653589793;
    return theta;
}

}  // namespace ogrg
