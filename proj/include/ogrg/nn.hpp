#pragma once

#include "ogrg/ops.hpp"

namespace ogrg {

enum class Init { TruncNormal, Zeros, Ones };

// Ordered registry of named parameters and buffers. Registration order is
// the creation order, which makes checkpoints and optimizer state stable
// across runs.
template <typename S>
class ParamStore {
  public:
    Tensor<S> param(const std::string& name, Shape shape, Init init, Rng& rng, double sigma = 0.02) {
        Tensor<S> t = make_tensor(std::move(shape), init, rng, sigma);
        t.set_requires_grad(true);
        entries_.push_back({name, t, true});
        return t;
    }

    // Non-trainable state carried in checkpoints (e.g. batchnorm running stats).
    Tensor<S> buffer(const std::string& name, Shape shape, Init init) {
        Rng dummy(1);
        Tensor<S> t = make_tensor(std::move(shape), init, dummy, 0.0);
        entries_.push_back({name, t, false});
        return t;
    }

    struct Entry {
        std::string name;
        Tensor<S> tensor;
        bool trainable;
    };

    const std::vector<Entry>& entries() const { return entries_; }

    std::vector<Tensor<S>> trainable() const {
        std::vector<Tensor<S>> out;
        for (const auto& e : entries_)
            if (e.trainable) out.push_back(e.tensor);
        return out;
    }

    Tensor<S> find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw ParameterError("ParamStore: no entry named " + name);
    }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += e.tensor.numel();
        return n;
    }

  private:
    static Tensor<S> make_tensor(Shape shape, Init init, Rng& rng, double sigma) {
        Tensor<S> t(std::move(shape));
        switch (init) {
            case Init::TruncNormal:
                for (auto& v : t.values()) v = static_cast<S>(rng.trunc_normal(sigma));
                break;
            case Init::Zeros:
                break;
            case Init::Ones:
                std::fill(t.values().begin(), t.values().end(), S(1));
                break;
        }
        return t;
    }

    std::vector<Entry> entries_;
};

template <typename S>
struct Linear {
    Tensor<S> w;  // [out, in]
    Tensor<S> b;  // [out]

    Linear() = default;
    Linear(ParamStore<S>& ps, const std::string& name, int in, int out, Rng& rng)
        : w(ps.param(name + ".w", Shape{out, in}, Init::TruncNormal, rng)),
          b(ps.param(name + ".b", Shape{out}, Init::Zeros, rng)) {}

    // x: [N, in] -> [N, out]
    Tensor<S> forward(const Tensor<S>& x) const { return add(matmul(x, transpose2d(w)), b); }
};

// Projection applied as W * x on column-major feature layouts ([dim, N]).
template <typename S>
struct Projection {
    Tensor<S> w;  // [out, in]

    Projection() = default;
    Projection(ParamStore<S>& ps, const std::string& name, int in, int out, Rng& rng)
        : w(ps.param(name + ".w", Shape{out, in}, Init::TruncNormal, rng)) {}

    Tensor<S> forward(const Tensor<S>& x) const { return matmul(w, x); }
};

template <typename S>
struct Conv2dLayer {
    Tensor<S> w;  // [co, ci, k, k]
    Tensor<S> b;  // [co]
    int stride = 1;
    int pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(ParamStore<S>& ps, const std::string& name, int ci, int co, int k, int stride_, Rng& rng)
        : w(ps.param(name + ".w", Shape{co, ci, k, k}, Init::TruncNormal, rng)),
          b(ps.param(name + ".b", Shape{co}, Init::Zeros, rng)),
          stride(stride_),
          pad(k / 2) {}

    Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename S>
struct BatchNorm2d {
    Tensor<S> gamma, beta;
    Tensor<S> running_mean, running_var;

    BatchNorm2d() = default;
    BatchNorm2d(ParamStore<S>& ps, const std::string& name, int c) {
        Rng r(1);
        gamma = ps.param(name + ".gamma", Shape{c}, Init::Ones, r);
        beta = ps.param(name + ".beta", Shape{c}, Init::Zeros, r);
        running_mean = ps.buffer(name + ".running_mean", Shape{c}, Init::Zeros);
        running_var = ps.buffer(name + ".running_var", Shape{c}, Init::Ones);
    }

    Tensor<S> forward(const Tensor<S>& x, bool train) const {
        // Tensor handles share storage; copies below alias the registered
        // buffers, so the running-stat update lands in the checkpointed state.
        Tensor<S> rm = running_mean, rv = running_var;
        return batchnorm2d(x, gamma, beta, rm.values(), rv.values(), train);
    }
};

template <typename S>
struct LayerNorm {
    Tensor<S> gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<S>& ps, const std::string& name, int c) {
        Rng r(1);
        gamma = ps.param(name + ".gamma", Shape{c}, Init::Ones, r);
        beta = ps.param(name + ".beta", Shape{c}, Init::Zeros, r);
    }

    Tensor<S> forward(const Tensor<S>& x) const { return layernorm_lastdim(x, gamma, beta); }
};

// conv3x3 -> BN -> ReLU
template <typename S>
struct ConvBnRelu {
    Conv2dLayer<S> conv;
    BatchNorm2d<S> bn;

    ConvBnRelu() = default;
    ConvBnRelu(ParamStore<S>& ps, const std::string& name, int ci, int co, int k, int stride, Rng& rng)
        : conv(ps, name + ".conv", ci, co, k, stride, rng), bn(ps, name + ".bn", co) {}

    Tensor<S> forward(const Tensor<S>& x, bool train) const {
        return relu(bn.forward(conv.forward(x), train));
    }
};

// Two 3x3 convs with an identity skip; stride-2 variants use a 1x1
// projection on the skip path.
template <typename S>
struct ResidualBlock {
    Conv2dLayer<S> c1, c2;
    BatchNorm2d<S> b1, b2;
    Conv2dLayer<S> proj;
    BatchNorm2d<S> proj_bn;
    bool has_proj = false;

    ResidualBlock() = default;
    ResidualBlock(ParamStore<S>& ps, const std::string& name, int ci, int co, int stride, Rng& rng)
        : c1(ps, name + ".c1", ci, co, 3, stride, rng),
          c2(ps, name + ".c2", co, co, 3, 1, rng),
          b1(ps, name + ".b1", co),
          b2(ps, name + ".b2", co) {
        if (stride != 1 || ci != co) {
            proj = Conv2dLayer<S>(ps, name + ".proj", ci, co, 1, stride, rng);
            proj_bn = BatchNorm2d<S>(ps, name + ".proj_bn", co);
            has_proj = true;
        }
    }

    Tensor<S> forward(const Tensor<S>& x, bool train) const {
        Tensor<S> h = relu(b1.forward(c1.forward(x), train));
        h = b2.forward(c2.forward(h), train);
        Tensor<S> skip = has_proj ? proj_bn.forward(proj.forward(x), train) : x;
        return relu(add(h, skip));
    }
};

// Multi-head self-attention over [T, C] token rows. Key positions listed in
// key_bias (one entry per key, 0 or a large negative number) are excluded
// from every query's context.
template <typename S>
struct SelfAttention {
    Linear<S> q, k, v, proj;
    int heads = 1;
    int dim = 0;

    SelfAttention() = default;
    SelfAttention(ParamStore<S>& ps, const std::string& name, int c, int heads_, Rng& rng)
        : q(ps, name + ".q", c, c, rng),
          k(ps, name + ".k", c, c, rng),
          v(ps, name + ".v", c, c, rng),
          proj(ps, name + ".proj", c, c, rng),
          heads(heads_),
          dim(c) {
        if (c % heads_ != 0) throw ParameterError("SelfAttention: heads must divide channel count");
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>* key_bias = nullptr) const {
        const int dh = dim / heads;
        Tensor<S> qq = q.forward(x), kk = k.forward(x), vv = v.forward(x);
        const S inv = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));
        std::vector<Tensor<S>> outs;
        outs.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor<S> qh = heads == 1 ? qq : narrow_lastdim(qq, h * dh, dh);
            Tensor<S> kh = heads == 1 ? kk : narrow_lastdim(kk, h * dh, dh);
            Tensor<S> vh = heads == 1 ? vv : narrow_lastdim(vv, h * dh, dh);
            Tensor<S> logits = scale(matmul(qh, transpose2d(kh)), inv);
            if (key_bias) logits = add(logits, *key_bias);
            outs.push_back(matmul(softmax_lastdim(logits), vh));
        }
        Tensor<S> merged = heads == 1 ? outs[0] : concat_lastdim(outs);
        return proj.forward(merged);
    }
};

// Pre-norm transformer block on [T, C] tokens.
template <typename S>
struct TransformerBlock {
    LayerNorm<S> ln1, ln2;
    SelfAttention<S> attn;
    Linear<S> fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<S>& ps, const std::string& name, int c, int heads, int mlp_ratio, Rng& rng)
        : ln1(ps, name + ".ln1", c),
          ln2(ps, name + ".ln2", c),
          attn(ps, name + ".attn", c, heads, rng),
          fc1(ps, name + ".fc1", c, c * mlp_ratio, rng),
          fc2(ps, name + ".fc2", c * mlp_ratio, c, rng) {}

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>* key_bias = nullptr) const {
        Tensor<S> h = add(x, attn.forward(ln1.forward(x), key_bias));
        return add(h, fc2.forward(relu(fc1.forward(ln2.forward(h)))));
    }
};

}  // namespace ogrg
