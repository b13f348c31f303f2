#pragma once

#include "ogrg/tensor.hpp"

namespace ogrg {

// lambda0 * (1 - t/T)^p, clamped to zero past the horizon.
inline double poly_lr(long t, long total, double base_lr, double power = 0.9) {
    if (t < 0 || total <= 0) throw ParameterError("poly_lr: t >= 0 and T > 0 required");
    if (t >= total) return 0.0;
    return base_lr * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

// AdamW with decoupled weight decay and bias-corrected moments. A NaN or Inf
// gradient refuses the whole step and leaves parameters untouched.
template <typename S>
class AdamW {
  public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    explicit AdamW(std::vector<Tensor<S>> params) : params_(std::move(params)) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), S(0));
            v_[i].assign(params_[i].numel(), S(0));
        }
    }

    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    // Global-norm gradient clip; returns the pre-clip norm.
    double clip_grad_norm(double max_norm) {
        double acc = 0.0;
        for (auto& p : params_)
            for (S g : p.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(acc);
        if (max_norm > 0.0 && norm > max_norm) {
            const S s = static_cast<S>(max_norm / norm);
            for (auto& p : params_)
                for (S& g : p.grad()) g *= s;
        }
        return norm;
    }

    void step(double lr) {
        for (auto& p : params_)
            for (S g : p.grad())
                if (!std::isfinite(static_cast<double>(g)))
                    throw NumericError("adamw: non-finite gradient, step refused");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& val = params_[i].values();
            auto& grad = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double g = static_cast<double>(grad[j]);
                m[j] = static_cast<S>(beta1 * m[j] + (1.0 - beta1) * g);
                v[j] = static_cast<S>(beta2 * v[j] + (1.0 - beta2) * g * g);
                const double mhat = static_cast<double>(m[j]) / bc1;
                const double vhat = static_cast<double>(v[j]) / bc2;
                double upd = mhat / (std::sqrt(vhat) + eps);
                upd += weight_decay * static_cast<double>(val[j]);
                val[j] = static_cast<S>(static_cast<double>(val[j]) - lr * upd);
            }
        }
    }

    const std::vector<Tensor<S>>& params() const { return params_; }
    std::vector<std::vector<S>>& moments_m() { return m_; }
    std::vector<std::vector<S>>& moments_v() { return v_; }

  private:
    std::vector<Tensor<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    long t_ = 0;
};

}  // namespace ogrg
