#pragma once

#include <cmath>
#include <cstring>
#include <thread>

#include "ogrg/tensor.hpp"

// Differentiable op set. Every op is a pure function of its inputs; when a
// tape is active and any input requires gradients, the op records one
// backward closure. Closures add into input gradients (accumulation across
// multiple uses) and zero their output gradient once consumed, so leaf
// gradients survive the reverse replay.

namespace ogrg {

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

namespace detail {

template <typename S>
void add_into(std::vector<S>& dst, const std::vector<S>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename S>
bool grad_pending(const std::shared_ptr<TensorData<S>>& d) {
    return !d->grad.empty();
}

template <typename S>
void consume(const std::shared_ptr<TensorData<S>>& d) {
    std::fill(d->grad.begin(), d->grad.end(), S(0));
}

template <typename S>
void check_finite(const Tensor<S>& x, const char* op) {
    for (S v : x.values())
        if (std::isnan(static_cast<double>(v)))
            throw NumericError(std::string(op) + ": NaN in input");
}

// True when b's shape is a suffix of a's shape (leading-axis broadcast).
inline bool suffix_shape(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace detail

template <typename S, typename Fwd, typename Bwd>
Tensor<S> make_unary(const Tensor<S>& x, Fwd fwd, Bwd bwd_factory) {
    Tensor<S> y(x.shape());
    fwd(x.values(), y.values());
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        Tape<S>::current()->record(bwd_factory(x.data_ptr(), y.data_ptr()));
    }
    return y;
}

// ---------------------------------------------------------------------------
// Layout ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                             " changes element count");
    Tensor<S> y(std::move(new_shape), x.values());
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            detail::add_into(xd->grad, yd->grad);
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& x) {
    if (x.ndim() != 2) throw DimensionError("transpose2d: expected 2-d, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tensor<S> y(Shape{n, m});
    const auto& xv = x.values();
    auto& yv = y.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) yv[static_cast<std::size_t>(j) * m + i] = xv[static_cast<std::size_t>(i) * n + j];
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, m, n] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    xd->grad[static_cast<std::size_t>(i) * n + j] += yd->grad[static_cast<std::size_t>(j) * m + i];
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> narrow0(const Tensor<S>& x, int start, int len) {
    if (x.ndim() < 1) throw DimensionError("narrow0: rank-0 tensor");
    const int d0 = x.dim(0);
    if (start < 0 || len <= 0 || start + len > d0)
        throw DimensionError("narrow0: slice [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") outside axis of size " + std::to_string(d0));
    Shape os = x.shape();
    os[0] = len;
    const std::size_t row = x.numel() / static_cast<std::size_t>(d0);
    Tensor<S> y(os);
    std::memcpy(y.values().data(), x.values().data() + static_cast<std::size_t>(start) * row,
                static_cast<std::size_t>(len) * row * sizeof(S));
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, start, row] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            const std::size_t off = static_cast<std::size_t>(start) * row;
            for (std::size_t i = 0; i < yd->grad.size(); ++i) xd->grad[off + i] += yd->grad[i];
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> narrow_lastdim(const Tensor<S>& x, int start, int len) {
    if (x.ndim() < 1) throw DimensionError("narrow_lastdim: rank-0 tensor");
    const int n = x.shape().back();
    if (start < 0 || len <= 0 || start + len > n)
        throw DimensionError("narrow_lastdim: slice outside axis of size " + std::to_string(n));
    Shape os = x.shape();
    os.back() = len;
    const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
    Tensor<S> y(os);
    const auto& xv = x.values();
    auto& yv = y.values();
    for (std::size_t r = 0; r < rows; ++r)
        std::memcpy(yv.data() + r * len, xv.data() + r * n + start, static_cast<std::size_t>(len) * sizeof(S));
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, start, len, n, rows] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (int j = 0; j < len; ++j)
                    xd->grad[r * n + start + j] += yd->grad[r * len + j];
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> concat0(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw ParameterError("concat0: empty input list");
    Shape os = xs[0].shape();
    const std::size_t row = xs[0].numel() / static_cast<std::size_t>(os[0]);
    int total = 0;
    for (const auto& x : xs) {
        Shape s = x.shape();
        if (s.size() != os.size() || !std::equal(s.begin() + 1, s.end(), os.begin() + 1))
            throw DimensionError("concat0: trailing shape mismatch " + shape_str(s) + " vs " + shape_str(os));
        total += s[0];
    }
    os[0] = total;
    Tensor<S> y(os);
    std::size_t off = 0;
    bool any_grad = false;
    for (const auto& x : xs) {
        std::memcpy(y.values().data() + off, x.values().data(), x.numel() * sizeof(S));
        off += x.numel();
        any_grad = any_grad || grad_enabled_for(x);
    }
    if (any_grad) {
        y.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData<S>>> parts;
        for (const auto& x : xs) parts.push_back(x.data_ptr());
        auto yd = y.data_ptr();
        Tape<S>::current()->record([parts, yd, row] {
            (void)row;
            if (!detail::grad_pending(yd)) return;
            std::size_t o = 0;
            for (auto& p : parts) {
                p->ensure_grad();
                for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += yd->grad[o + i];
                o += p->value.size();
            }
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> concat_lastdim(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw ParameterError("concat_lastdim: empty input list");
    Shape base = xs[0].shape();
    int total = 0;
    for (const auto& x : xs) {
        Shape s = x.shape();
        if (s.size() != base.size() || !std::equal(s.begin(), s.end() - 1, base.begin()))
            throw DimensionError("concat_lastdim: leading shape mismatch");
        total += s.back();
    }
    Shape os = base;
    os.back() = total;
    const std::size_t rows = xs[0].numel() / static_cast<std::size_t>(base.back());
    Tensor<S> y(os);
    auto& yv = y.values();
    bool any_grad = false;
    {
        std::size_t col = 0;
        for (const auto& x : xs) {
            const int w = x.shape().back();
            const auto& xv = x.values();
            for (std::size_t r = 0; r < rows; ++r)
                std::memcpy(yv.data() + r * total + col, xv.data() + r * w, static_cast<std::size_t>(w) * sizeof(S));
            col += static_cast<std::size_t>(w);
            any_grad = any_grad || grad_enabled_for(x);
        }
    }
    if (any_grad) {
        y.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData<S>>> parts;
        std::vector<int> widths;
        for (const auto& x : xs) {
            parts.push_back(x.data_ptr());
            widths.push_back(x.shape().back());
        }
        auto yd = y.data_ptr();
        Tape<S>::current()->record([parts, widths, yd, rows, total] {
            if (!detail::grad_pending(yd)) return;
            std::size_t col = 0;
            for (std::size_t p = 0; p < parts.size(); ++p) {
                parts[p]->ensure_grad();
                const int w = widths[p];
                for (std::size_t r = 0; r < rows; ++r)
                    for (int j = 0; j < w; ++j)
                        parts[p]->grad[r * w + j] += yd->grad[r * total + col + j];
                col += static_cast<std::size_t>(w);
            }
            detail::consume(yd);
        });
    }
    return y;
}

// Scales row r (axis 0) of x by m[r]. Used for pad-row masking and
// per-channel gates on [C,H,W] maps.
template <typename S>
Tensor<S> mul_rows(const Tensor<S>& x, const Tensor<S>& m) {
    if (x.ndim() < 1 || m.ndim() != 1 || m.dim(0) != x.dim(0))
        throw DimensionError("mul_rows: " + shape_str(x.shape()) + " vs " + shape_str(m.shape()));
    const int rows = x.dim(0);
    const std::size_t stride = x.numel() / static_cast<std::size_t>(rows);
    Tensor<S> y(x.shape());
    const auto& xv = x.values();
    const auto& mv = m.values();
    auto& yv = y.values();
    for (int r = 0; r < rows; ++r) {
        const S s = mv[static_cast<std::size_t>(r)];
        for (std::size_t i = 0; i < stride; ++i) yv[r * stride + i] = xv[r * stride + i] * s;
    }
    if (grad_enabled_for(x) || grad_enabled_for(m)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto md = m.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, md, yd, rows, stride] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            md->ensure_grad();
            for (int r = 0; r < rows; ++r) {
                const S s = md->value[static_cast<std::size_t>(r)];
                S gm = 0;
                for (std::size_t i = 0; i < stride; ++i) {
                    const S gy = yd->grad[r * stride + i];
                    xd->grad[r * stride + i] += gy * s;
                    gm += gy * xd->value[r * stride + i];
                }
                md->grad[static_cast<std::size_t>(r)] += gm;
            }
            detail::consume(yd);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Element-wise ops (suffix-shape broadcast over leading axes)

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (!detail::suffix_shape(a.shape(), b.shape()))
        throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> y(a.shape());
    const std::size_t nb = b.numel();
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& yv = y.values();
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i % nb];
    if (grad_enabled_for(a) || grad_enabled_for(b)) {
        y.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto bd = b.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([ad, bd, yd, nb] {
            if (!detail::grad_pending(yd)) return;
            ad->ensure_grad();
            bd->ensure_grad();
            for (std::size_t i = 0; i < yd->grad.size(); ++i) {
                ad->grad[i] += yd->grad[i];
                bd->grad[i % nb] += yd->grad[i];
            }
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (!detail::suffix_shape(a.shape(), b.shape()))
        throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<S> y(a.shape());
    const std::size_t nb = b.numel();
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& yv = y.values();
    for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i % nb];
    if (grad_enabled_for(a) || grad_enabled_for(b)) {
        y.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto bd = b.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([ad, bd, yd, nb] {
            if (!detail::grad_pending(yd)) return;
            ad->ensure_grad();
            bd->ensure_grad();
            for (std::size_t i = 0; i < yd->grad.size(); ++i) {
                ad->grad[i] += yd->grad[i] * bd->value[i % nb];
                bd->grad[i % nb] += yd->grad[i] * ad->value[i];
            }
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return make_unary(
        x,
        [c](const std::vector<S>& xv, std::vector<S>& yv) {
            for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] * c;
        },
        [c](auto xd, auto yd) {
            return [xd, yd, c] {
                if (!detail::grad_pending(yd)) return;
                xd->ensure_grad();
                for (std::size_t i = 0; i < yd->grad.size(); ++i) xd->grad[i] += yd->grad[i] * c;
                detail::consume(yd);
            };
        });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    return make_unary(
        x,
        [c](const std::vector<S>& xv, std::vector<S>& yv) {
            for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] + c;
        },
        [](auto xd, auto yd) {
            return [xd, yd] {
                if (!detail::grad_pending(yd)) return;
                xd->ensure_grad();
                detail::add_into(xd->grad, yd->grad);
                detail::consume(yd);
            };
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return add(a, scale(b, S(-1)));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    return make_unary(
        x,
        [](const std::vector<S>& xv, std::vector<S>& yv) {
            for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] > S(0) ? xv[i] : S(0);
        },
        [](auto xd, auto yd) {
            return [xd, yd] {
                if (!detail::grad_pending(yd)) return;
                xd->ensure_grad();
                for (std::size_t i = 0; i < yd->grad.size(); ++i)
                    if (xd->value[i] > S(0)) xd->grad[i] += yd->grad[i];
                detail::consume(yd);
            };
        });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return make_unary(
        x,
        [](const std::vector<S>& xv, std::vector<S>& yv) {
            for (std::size_t i = 0; i < yv.size(); ++i)
                yv[i] = S(1) / (S(1) + std::exp(-xv[i]));
        },
        [](auto xd, auto yd) {
            return [xd, yd] {
                if (!detail::grad_pending(yd)) return;
                xd->ensure_grad();
                for (std::size_t i = 0; i < yd->grad.size(); ++i) {
                    const S s = yd->value[i];
                    xd->grad[i] += yd->grad[i] * s * (S(1) - s);
                }
                detail::consume(yd);
            };
        });
}

template <typename S>
Tensor<S> tanh_op(const Tensor<S>& x) {
    return make_unary(
        x,
        [](const std::vector<S>& xv, std::vector<S>& yv) {
            for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = std::tanh(xv[i]);
        },
        [](auto xd, auto yd) {
            return [xd, yd] {
                if (!detail::grad_pending(yd)) return;
                xd->ensure_grad();
                for (std::size_t i = 0; i < yd->grad.size(); ++i) {
                    const S t = yd->value[i];
                    xd->grad[i] += yd->grad[i] * (S(1) - t * t);
                }
                detail::consume(yd);
            };
        });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S acc = 0;
    for (S v : x.values()) acc += v;
    Tensor<S> y = Tensor<S>::scalar(acc);
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            const S g = yd->grad[0];
            for (auto& gi : xd->grad) gi += g;
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return scale(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

// ---------------------------------------------------------------------------
// matmul

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul: expected 2-d operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tensor<S> y(Shape{m, n});
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* yv = y.values().data();
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            S* yrow = yv + i * n;
            const S* arow = av + i * k;
            for (int kk = 0; kk < k; ++kk) {
                const S aa = arow[kk];
                const S* brow = bv + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) yrow[j] += aa * brow[j];
            }
        }
    });
    if (grad_enabled_for(a) || grad_enabled_for(b)) {
        y.set_requires_grad(true);
        auto ad = a.data_ptr();
        auto bd = b.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([ad, bd, yd, m, k, n] {
            if (!detail::grad_pending(yd)) return;
            ad->ensure_grad();
            bd->ensure_grad();
            const S* g = yd->grad.data();
            // dA = dY * B^T
            for (int i = 0; i < m; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    S acc = 0;
                    const S* grow = g + static_cast<std::size_t>(i) * n;
                    const S* brow = bd->value.data() + static_cast<std::size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ad->grad[static_cast<std::size_t>(i) * k + kk] += acc;
                }
            // dB = A^T * dY
            for (int kk = 0; kk < k; ++kk) {
                S* brow = bd->grad.data() + static_cast<std::size_t>(kk) * n;
                for (int i = 0; i < m; ++i) {
                    const S aa = ad->value[static_cast<std::size_t>(i) * k + kk];
                    const S* grow = g + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) brow[j] += aa * grow[j];
                }
            }
            detail::consume(yd);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// softmax over the last axis, max-subtracted

template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    if (x.ndim() < 1 || x.shape().back() < 1)
        throw DimensionError("softmax_lastdim: needs a non-empty last axis");
    detail::check_finite(x, "softmax_lastdim");
    const int n = x.shape().back();
    const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
    Tensor<S> y(x.shape());
    const auto& xv = x.values();
    auto& yv = y.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xi = xv.data() + r * n;
        S* yi = yv.data() + r * n;
        S mx = xi[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        S sum = 0;
        for (int j = 0; j < n; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        const S inv = S(1) / sum;
        for (int j = 0; j < n; ++j) yi[j] *= inv;
    }
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, rows, n] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const S* yi = yd->value.data() + r * n;
                const S* gi = yd->grad.data() + r * n;
                S dot = 0;
                for (int j = 0; j < n; ++j) dot += gi[j] * yi[j];
                S* xg = xd->grad.data() + r * n;
                for (int j = 0; j < n; ++j) xg[j] += yi[j] * (gi[j] - dot);
            }
            detail::consume(yd);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// conv2d on [C,H,W] maps, cross-correlation semantics, zero padding

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int stride, int pad) {
    if (x.ndim() != 3 || w.ndim() != 4)
        throw DimensionError("conv2d: expected x[C,H,W], w[Co,Ci,k,k]");
    const int ci = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const int co = w.dim(0), wci = w.dim(1), k = w.dim(2), k2 = w.dim(3);
    if (k != k2 || (k != 1 && k != 3 && k != 7))
        throw ParameterError("conv2d: kernel must be square with k in {1,3,7}, got " +
                             std::to_string(k) + "x" + std::to_string(k2));
    if (wci != ci)
        throw DimensionError("conv2d: input has " + std::to_string(ci) + " channels, kernel expects " +
                             std::to_string(wci));
    if (bias.ndim() != 1 || bias.dim(0) != co) throw DimensionError("conv2d: bias length must equal Co");
    if (stride < 1 || pad < 0) throw ParameterError("conv2d: stride >= 1, pad >= 0");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (ww + 2 * pad - k) / stride + 1;
    if (oh < 1 || ow < 1) throw DimensionError("conv2d: empty output for input " + shape_str(x.shape()));

    Tensor<S> y(Shape{co, oh, ow});
    const S* xv = x.values().data();
    const S* wv = w.values().data();
    const S* bv = bias.values().data();
    S* yv = y.values().data();

    parallel_for(static_cast<std::size_t>(co), [&](std::size_t c0, std::size_t c1) {
        for (std::size_t oc = c0; oc < c1; ++oc) {
            S* outc = yv + oc * oh * ow;
            for (int i = 0; i < oh * ow; ++i) outc[i] = bv[oc];
            for (int ic = 0; ic < ci; ++ic) {
                const S* inc = xv + static_cast<std::size_t>(ic) * h * ww;
                const S* wk = wv + ((oc * ci + ic) * k) * k;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const S wgt = wk[ky * k + kx];
                        if (wgt == S(0)) continue;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const S* irow = inc + static_cast<std::size_t>(iy) * ww;
                            S* orow = outc + static_cast<std::size_t>(oy) * ow;
                            // valid ox range: 0 <= ox*stride + kx - pad < ww
                            int ox0 = 0;
                            while (ox0 < ow && ox0 * stride + kx - pad < 0) ++ox0;
                            int ox1 = ow;
                            while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= ww) --ox1;
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wgt * irow[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    });

    if (grad_enabled_for(x) || grad_enabled_for(w) || grad_enabled_for(bias)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto wd = w.data_ptr();
        auto bd = bias.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, wd, bd, yd, ci, h, ww, co, k, stride, pad, oh, ow] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            wd->ensure_grad();
            bd->ensure_grad();
            const S* g = yd->grad.data();
            for (int oc = 0; oc < co; ++oc) {
                const S* gc = g + static_cast<std::size_t>(oc) * oh * ow;
                S bacc = 0;
                for (int i = 0; i < oh * ow; ++i) bacc += gc[i];
                bd->grad[static_cast<std::size_t>(oc)] += bacc;
                for (int ic = 0; ic < ci; ++ic) {
                    const S* inc = xd->value.data() + static_cast<std::size_t>(ic) * h * ww;
                    S* ing = xd->grad.data() + static_cast<std::size_t>(ic) * h * ww;
                    const S* wk = wd->value.data() + ((static_cast<std::size_t>(oc) * ci + ic) * k) * k;
                    S* wg = wd->grad.data() + ((static_cast<std::size_t>(oc) * ci + ic) * k) * k;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const S wgt = wk[ky * k + kx];
                            S wacc = 0;
                            for (int oy = 0; oy < oh; ++oy) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                const S* irow = inc + static_cast<std::size_t>(iy) * ww;
                                S* igrow = ing + static_cast<std::size_t>(iy) * ww;
                                const S* grow = gc + static_cast<std::size_t>(oy) * ow;
                                int ox0 = 0;
                                while (ox0 < ow && ox0 * stride + kx - pad < 0) ++ox0;
                                int ox1 = ow;
                                while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= ww) --ox1;
                                for (int ox = ox0; ox < ox1; ++ox) {
                                    const int ix = ox * stride + kx - pad;
                                    wacc += grow[ox] * irow[ix];
                                    igrow[ix] += grow[ox] * wgt;
                                }
                            }
                            wg[ky * k + kx] += wacc;
                        }
                    }
                }
            }
            detail::consume(yd);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// bilinear upsample by an integer factor, half-pixel centers

template <typename S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, int factor) {
    if (factor < 2) throw ParameterError("bilinear_upsample: factor must be >= 2");
    if (x.ndim() != 3) throw DimensionError("bilinear_upsample: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int oh = h * factor, ow = w * factor;
    Tensor<S> y(Shape{c, oh, ow});

    // Per output coordinate: source pos, two neighbors, weight. Shared
    // between forward and backward.
    std::vector<int> y0(oh), y1v(oh), x0(ow), x1v(ow);
    std::vector<S> wy(oh), wx(ow);
    auto prep = [factor](int o, int limit, int& a, int& b, S& t) {
        const double src = (o + 0.5) / factor - 0.5;
        double fl = std::floor(src);
        a = std::max(0, std::min(limit - 1, static_cast<int>(fl)));
        b = std::max(0, std::min(limit - 1, static_cast<int>(fl) + 1));
        t = static_cast<S>(src - fl);
        if (static_cast<int>(fl) < 0) t = S(0);
        if (static_cast<int>(fl) + 1 > limit - 1) t = S(0);
    };
    for (int oy = 0; oy < oh; ++oy) prep(oy, h, y0[oy], y1v[oy], wy[oy]);
    for (int ox = 0; ox < ow; ++ox) prep(ox, w, x0[ox], x1v[ox], wx[ox]);

    const auto& xv = x.values();
    auto& yv = y.values();
    for (int ic = 0; ic < c; ++ic) {
        const S* inc = xv.data() + static_cast<std::size_t>(ic) * h * w;
        S* outc = yv.data() + static_cast<std::size_t>(ic) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const S* r0 = inc + static_cast<std::size_t>(y0[oy]) * w;
            const S* r1 = inc + static_cast<std::size_t>(y1v[oy]) * w;
            const S ty = wy[oy];
            S* orow = outc + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
                const S tx = wx[ox];
                const S top = r0[x0[ox]] * (S(1) - tx) + r0[x1v[ox]] * tx;
                const S bot = r1[x0[ox]] * (S(1) - tx) + r1[x1v[ox]] * tx;
                orow[ox] = top * (S(1) - ty) + bot * ty;
            }
        }
    }
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, c, h, w, oh, ow, y0, y1v, x0, x1v, wy, wx] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int ic = 0; ic < c; ++ic) {
                S* ing = xd->grad.data() + static_cast<std::size_t>(ic) * h * w;
                const S* gc = yd->grad.data() + static_cast<std::size_t>(ic) * oh * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const S ty = wy[oy];
                    const S* grow = gc + static_cast<std::size_t>(oy) * ow;
                    S* g0 = ing + static_cast<std::size_t>(y0[oy]) * w;
                    S* g1 = ing + static_cast<std::size_t>(y1v[oy]) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const S tx = wx[ox];
                        const S g = grow[ox];
                        g0[x0[ox]] += g * (S(1) - tx) * (S(1) - ty);
                        g0[x1v[ox]] += g * tx * (S(1) - ty);
                        g1[x0[ox]] += g * (S(1) - tx) * ty;
                        g1[x1v[ox]] += g * tx * ty;
                    }
                }
            }
            detail::consume(yd);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// normalization

// Batch statistics over H*W per channel in train mode, running statistics in
// eval mode. Running buffers are plain vectors owned by the layer; the update
// is a forward side effect and carries no gradient.
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      std::vector<S>& running_mean, std::vector<S>& running_var, bool train,
                      S momentum = S(0.1), S eps = S(1e-5)) {
    if (x.ndim() != 3) throw DimensionError("batchnorm2d: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (n == 0) throw ParameterError("batchnorm2d: zero-size spatial extent");
    if (eps <= S(0)) throw ParameterError("batchnorm2d: eps must be positive");
    if (gamma.ndim() != 1 || gamma.dim(0) != c || beta.ndim() != 1 || beta.dim(0) != c)
        throw DimensionError("batchnorm2d: gamma/beta length must equal channel count");
    if (running_mean.size() != static_cast<std::size_t>(c) || running_var.size() != static_cast<std::size_t>(c))
        throw DimensionError("batchnorm2d: running stats length must equal channel count");

    Tensor<S> y(x.shape());
    std::vector<S> mean(c), invstd(c);
    const auto& xv = x.values();
    auto& yv = y.values();
    for (int ic = 0; ic < c; ++ic) {
        const S* inc = xv.data() + static_cast<std::size_t>(ic) * n;
        S mu, var;
        if (train) {
            S s = 0;
            for (std::size_t i = 0; i < n; ++i) s += inc[i];
            mu = s / static_cast<S>(n);
            S v = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const S d = inc[i] - mu;
                v += d * d;
            }
            var = v / static_cast<S>(n);
            const S unbiased = n > 1 ? v / static_cast<S>(n - 1) : var;
            running_mean[ic] = (S(1) - momentum) * running_mean[ic] + momentum * mu;
            running_var[ic] = (S(1) - momentum) * running_var[ic] + momentum * unbiased;
        } else {
            mu = running_mean[ic];
            var = running_var[ic];
        }
        mean[ic] = mu;
        invstd[ic] = S(1) / std::sqrt(var + eps);
        const S g = gamma.values()[static_cast<std::size_t>(ic)];
        const S b = beta.values()[static_cast<std::size_t>(ic)];
        S* outc = yv.data() + static_cast<std::size_t>(ic) * n;
        for (std::size_t i = 0; i < n; ++i) outc[i] = (inc[i] - mu) * invstd[ic] * g + b;
    }
    if (grad_enabled_for(x) || grad_enabled_for(gamma) || grad_enabled_for(beta)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto gd = gamma.data_ptr();
        auto bd = beta.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, gd, bd, yd, c, n, mean, invstd, train] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            gd->ensure_grad();
            bd->ensure_grad();
            for (int ic = 0; ic < c; ++ic) {
                const S* inc = xd->value.data() + static_cast<std::size_t>(ic) * n;
                const S* gc = yd->grad.data() + static_cast<std::size_t>(ic) * n;
                S* ig = xd->grad.data() + static_cast<std::size_t>(ic) * n;
                const S mu = mean[ic], is = invstd[ic];
                const S g = gd->value[static_cast<std::size_t>(ic)];
                S sum_g = 0, sum_gx = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    sum_g += gc[i];
                    sum_gx += gc[i] * (inc[i] - mu) * is;
                }
                bd->grad[static_cast<std::size_t>(ic)] += sum_g;
                gd->grad[static_cast<std::size_t>(ic)] += sum_gx;
                if (train) {
                    const S inv_n = S(1) / static_cast<S>(n);
                    for (std::size_t i = 0; i < n; ++i) {
                        const S xhat = (inc[i] - mu) * is;
                        ig[i] += g * is * (gc[i] - sum_g * inv_n - xhat * sum_gx * inv_n);
                    }
                } else {
                    for (std::size_t i = 0; i < n; ++i) ig[i] += gc[i] * g * is;
                }
            }
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> layernorm_lastdim(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                            S eps = S(1e-5)) {
    if (x.ndim() < 1) throw DimensionError("layernorm: rank-0 tensor");
    const int n = x.shape().back();
    if (gamma.ndim() != 1 || gamma.dim(0) != n || beta.ndim() != 1 || beta.dim(0) != n)
        throw DimensionError("layernorm: gamma/beta length must equal the normalized axis");
    if (eps <= S(0)) throw ParameterError("layernorm: eps must be positive");
    const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
    Tensor<S> y(x.shape());
    std::vector<S> mean(rows), invstd(rows);
    const auto& xv = x.values();
    auto& yv = y.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xi = xv.data() + r * n;
        S mu = 0;
        for (int j = 0; j < n; ++j) mu += xi[j];
        mu /= static_cast<S>(n);
        S var = 0;
        for (int j = 0; j < n; ++j) {
            const S d = xi[j] - mu;
            var += d * d;
        }
        var /= static_cast<S>(n);
        mean[r] = mu;
        invstd[r] = S(1) / std::sqrt(var + eps);
        S* yi = yv.data() + r * n;
        for (int j = 0; j < n; ++j)
            yi[j] = (xi[j] - mu) * invstd[r] * gamma.values()[static_cast<std::size_t>(j)] +
                    beta.values()[static_cast<std::size_t>(j)];
    }
    if (grad_enabled_for(x) || grad_enabled_for(gamma) || grad_enabled_for(beta)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto gd = gamma.data_ptr();
        auto bd = beta.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, gd, bd, yd, rows, n, mean, invstd] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            gd->ensure_grad();
            bd->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const S* xi = xd->value.data() + r * n;
                const S* gi = yd->grad.data() + r * n;
                S* xg = xd->grad.data() + r * n;
                const S mu = mean[r], is = invstd[r];
                S sum_g = 0, sum_gx = 0;
                for (int j = 0; j < n; ++j) {
                    const S xhat = (xi[j] - mu) * is;
                    const S gg = gi[j] * gd->value[static_cast<std::size_t>(j)];
                    sum_g += gg;
                    sum_gx += gg * xhat;
                    gd->grad[static_cast<std::size_t>(j)] += gi[j] * xhat;
                    bd->grad[static_cast<std::size_t>(j)] += gi[j];
                }
                const S inv_n = S(1) / static_cast<S>(n);
                for (int j = 0; j < n; ++j) {
                    const S xhat = (xi[j] - mu) * is;
                    const S gg = gi[j] * gd->value[static_cast<std::size_t>(j)];
                    xg[j] += is * (gg - sum_g * inv_n - xhat * sum_gx * inv_n);
                }
            }
            detail::consume(yd);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// structural ops for the hierarchical backbone

// [C,H,W] -> [C*s*s, H/s, W/s]; output channel c*s*s + dy*s + dx.
template <typename S>
Tensor<S> space_to_depth(const Tensor<S>& x, int s) {
    if (x.ndim() != 3) throw DimensionError("space_to_depth: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (s < 1 || h % s != 0 || w % s != 0)
        throw DimensionError("space_to_depth: spatial size " + shape_str(x.shape()) +
                             " not divisible by " + std::to_string(s));
    const int oh = h / s, ow = w / s;
    Tensor<S> y(Shape{c * s * s, oh, ow});
    const auto& xv = x.values();
    auto& yv = y.values();
    for (int ic = 0; ic < c; ++ic)
        for (int dy = 0; dy < s; ++dy)
            for (int dx = 0; dx < s; ++dx) {
                const int oc = (ic * s + dy) * s + dx;
                S* outc = yv.data() + static_cast<std::size_t>(oc) * oh * ow;
                const S* inc = xv.data() + static_cast<std::size_t>(ic) * h * w;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox)
                        outc[oy * ow + ox] = inc[(oy * s + dy) * w + ox * s + dx];
            }
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, c, h, w, s, oh, ow] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int ic = 0; ic < c; ++ic)
                for (int dy = 0; dy < s; ++dy)
                    for (int dx = 0; dx < s; ++dx) {
                        const int oc = (ic * s + dy) * s + dx;
                        const S* gc = yd->grad.data() + static_cast<std::size_t>(oc) * oh * ow;
                        S* ig = xd->grad.data() + static_cast<std::size_t>(ic) * h * w;
                        for (int oy = 0; oy < oh; ++oy)
                            for (int ox = 0; ox < ow; ++ox)
                                ig[(oy * s + dy) * w + ox * s + dx] += gc[oy * ow + ox];
                    }
            detail::consume(yd);
        });
    }
    return y;
}

// [C,H,W] -> [(H/w * W/w) * w*w, C] token rows, window-major then row-major
// inside each window. Inverse is window_unpartition.
template <typename S>
Tensor<S> window_partition(const Tensor<S>& x, int win) {
    if (x.ndim() != 3) throw DimensionError("window_partition: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (win < 1 || h % win != 0 || w % win != 0)
        throw DimensionError("window_partition: window " + std::to_string(win) + " does not divide " +
                             shape_str(x.shape()));
    const int wy = h / win, wx = w / win;
    const int tokens = h * w;
    Tensor<S> y(Shape{tokens, c});
    const auto& xv = x.values();
    auto& yv = y.values();
    for (int by = 0; by < wy; ++by)
        for (int bx = 0; bx < wx; ++bx) {
            const int base = (by * wx + bx) * win * win;
            for (int iy = 0; iy < win; ++iy)
                for (int ix = 0; ix < win; ++ix) {
                    const int row = base + iy * win + ix;
                    const int sy = by * win + iy, sx = bx * win + ix;
                    for (int ic = 0; ic < c; ++ic)
                        yv[static_cast<std::size_t>(row) * c + ic] =
                            xv[(static_cast<std::size_t>(ic) * h + sy) * w + sx];
                }
        }
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, c, h, w, win, wy, wx] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int by = 0; by < wy; ++by)
                for (int bx = 0; bx < wx; ++bx) {
                    const int base = (by * wx + bx) * win * win;
                    for (int iy = 0; iy < win; ++iy)
                        for (int ix = 0; ix < win; ++ix) {
                            const int row = base + iy * win + ix;
                            const int sy = by * win + iy, sx = bx * win + ix;
                            for (int ic = 0; ic < c; ++ic)
                                xd->grad[(static_cast<std::size_t>(ic) * h + sy) * w + sx] +=
                                    yd->grad[static_cast<std::size_t>(row) * c + ic];
                        }
                }
            detail::consume(yd);
        });
    }
    return y;
}

template <typename S>
Tensor<S> window_unpartition(const Tensor<S>& x, int win, int h, int w) {
    if (x.ndim() != 2) throw DimensionError("window_unpartition: expected [tokens, C]");
    const int c = x.dim(1);
    if (x.dim(0) != h * w) throw DimensionError("window_unpartition: token count mismatch");
    if (win < 1 || h % win != 0 || w % win != 0) throw DimensionError("window_unpartition: bad window");
    const int wx = w / win;
    Tensor<S> y(Shape{c, h, w});
    const auto& xv = x.values();
    auto& yv = y.values();
    for (int by = 0; by < h / win; ++by)
        for (int bx = 0; bx < wx; ++bx) {
            const int base = (by * wx + bx) * win * win;
            for (int iy = 0; iy < win; ++iy)
                for (int ix = 0; ix < win; ++ix) {
                    const int row = base + iy * win + ix;
                    const int sy = by * win + iy, sx = bx * win + ix;
                    for (int ic = 0; ic < c; ++ic)
                        yv[(static_cast<std::size_t>(ic) * h + sy) * w + sx] =
                            xv[static_cast<std::size_t>(row) * c + ic];
                }
        }
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, c, h, w, win, wx] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int by = 0; by < h / win; ++by)
                for (int bx = 0; bx < wx; ++bx) {
                    const int base = (by * wx + bx) * win * win;
                    for (int iy = 0; iy < win; ++iy)
                        for (int ix = 0; ix < win; ++ix) {
                            const int row = base + iy * win + ix;
                            const int sy = by * win + iy, sx = bx * win + ix;
                            for (int ic = 0; ic < c; ++ic)
                                xd->grad[static_cast<std::size_t>(row) * c + ic] +=
                                    yd->grad[(static_cast<std::size_t>(ic) * h + sy) * w + sx];
                        }
                }
            detail::consume(yd);
        });
    }
    return y;
}

// Token id lookup; gradients scatter into the table rows.
template <typename S>
Tensor<S> embedding(const std::vector<int>& ids, const Tensor<S>& table) {
    if (table.ndim() != 2) throw DimensionError("embedding: table must be [V,C]");
    const int v = table.dim(0), c = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw InputError("embedding: id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(v));
    Tensor<S> y(Shape{static_cast<int>(ids.size()), c});
    for (std::size_t r = 0; r < ids.size(); ++r)
        std::memcpy(y.values().data() + r * c, table.values().data() + static_cast<std::size_t>(ids[r]) * c,
                    static_cast<std::size_t>(c) * sizeof(S));
    if (grad_enabled_for(table)) {
        y.set_requires_grad(true);
        auto td = table.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([td, yd, ids, c] {
            if (!detail::grad_pending(yd)) return;
            td->ensure_grad();
            for (std::size_t r = 0; r < ids.size(); ++r)
                for (int j = 0; j < c; ++j)
                    td->grad[static_cast<std::size_t>(ids[r]) * c + j] += yd->grad[r * c + j];
            detail::consume(yd);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// image-plane rotation (bilinear, per-channel fill for out-of-frame samples)

struct RotGeom {
    double cx, cy, cosa, sina;
};

inline RotGeom rotation_geometry(int h, int w, double angle_rad) {
    return RotGeom{(w - 1) * 0.5, (h - 1) * 0.5, std::cos(angle_rad), std::sin(angle_rad)};
}

// Position in the rotated image where the source pixel (x, y) lands when the
// content is rotated by +angle.
inline void rotate_point_forward(double x, double y, const RotGeom& g, double& ox, double& oy) {
    const double dx = x - g.cx, dy = y - g.cy;
    ox = g.cosa * dx - g.sina * dy + g.cx;
    oy = g.sina * dx + g.cosa * dy + g.cy;
}

// Single bilinear fetch with per-neighbor fill; shared by rotate and the
// point sampler so their arithmetic matches bit for bit.
template <typename S>
inline S bilinear_fetch(const S* img, int h, int w, double sx, double sy, S fill,
                        int* nbr = nullptr, S* wts = nullptr) {
    const double fx = std::floor(sx), fy = std::floor(sy);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const S tx = static_cast<S>(sx - fx), ty = static_cast<S>(sy - fy);
    const S w00 = (S(1) - tx) * (S(1) - ty), w01 = tx * (S(1) - ty);
    const S w10 = (S(1) - tx) * ty, w11 = tx * ty;
    auto fetch = [&](int yy, int xx) -> S {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill;
        return img[static_cast<std::size_t>(yy) * w + xx];
    };
    if (nbr) {
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        const S ws[4] = {w00, w01, w10, w11};
        for (int i = 0; i < 4; ++i) {
            const bool in = ys[i] >= 0 && ys[i] < h && xs[i] >= 0 && xs[i] < w;
            nbr[i] = in ? ys[i] * w + xs[i] : -1;
            wts[i] = ws[i];
        }
    }
    return fetch(y0, x0) * w00 + fetch(y0, x0 + 1) * w01 + fetch(y0 + 1, x0) * w10 +
           fetch(y0 + 1, x0 + 1) * w11;
}

template <typename S>
Tensor<S> rotate_bilinear(const Tensor<S>& x, double angle_rad, const std::vector<S>& fill) {
    if (x.ndim() != 3) throw DimensionError("rotate_bilinear: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (fill.size() != static_cast<std::size_t>(c))
        throw DimensionError("rotate_bilinear: fill must provide one value per channel");
    const RotGeom g = rotation_geometry(h, w, angle_rad);
    Tensor<S> y(x.shape());
    const auto& xv = x.values();
    auto& yv = y.values();
    for (int ic = 0; ic < c; ++ic) {
        const S* inc = xv.data() + static_cast<std::size_t>(ic) * h * w;
        S* outc = yv.data() + static_cast<std::size_t>(ic) * h * w;
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                // inverse map: out(p) = in(R(-a)(p - c) + c)
                const double dx = ox - g.cx, dy = oy - g.cy;
                const double sx = g.cosa * dx + g.sina * dy + g.cx;
                const double sy = -g.sina * dx + g.cosa * dy + g.cy;
                outc[oy * w + ox] = bilinear_fetch(inc, h, w, sx, sy, fill[static_cast<std::size_t>(ic)]);
            }
    }
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, c, h, w, g] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int ic = 0; ic < c; ++ic) {
                S* ig = xd->grad.data() + static_cast<std::size_t>(ic) * h * w;
                const S* gc = yd->grad.data() + static_cast<std::size_t>(ic) * h * w;
                for (int oy = 0; oy < h; ++oy)
                    for (int ox = 0; ox < w; ++ox) {
                        const S gv = gc[oy * w + ox];
                        if (gv == S(0)) continue;
                        const double dx = ox - g.cx, dy = oy - g.cy;
                        const double sx = g.cosa * dx + g.sina * dy + g.cx;
                        const double sy = -g.sina * dx + g.cosa * dy + g.cy;
                        int nbr[4];
                        S wts[4];
                        bilinear_fetch<S>(xd->value.data() + static_cast<std::size_t>(ic) * h * w, h, w, sx,
                                          sy, S(0), nbr, wts);
                        for (int i = 0; i < 4; ++i)
                            if (nbr[i] >= 0) ig[nbr[i]] += gv * wts[i];
                    }
            }
            detail::consume(yd);
        });
    }
    return y;
}

// Exact 180-degree rotation (index reversal, no interpolation).
template <typename S>
Tensor<S> rotate180(const Tensor<S>& x) {
    if (x.ndim() != 3) throw DimensionError("rotate180: expected [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<S> y(x.shape());
    const auto& xv = x.values();
    auto& yv = y.values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ic = 0; ic < c; ++ic)
        for (std::size_t i = 0; i < plane; ++i) yv[ic * plane + i] = xv[ic * plane + (plane - 1 - i)];
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        Tape<S>::current()->record([xd, yd, c, plane] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int ic = 0; ic < c; ++ic)
                for (std::size_t i = 0; i < plane; ++i)
                    xd->grad[ic * plane + (plane - 1 - i)] += yd->grad[ic * plane + i];
            detail::consume(yd);
        });
    }
    return y;
}

// Differentiable bilinear probe of a [H,W] map at a real-valued position,
// identical arithmetic to rotate_bilinear's sampler.
template <typename S>
Tensor<S> bilinear_sample_at(const Tensor<S>& x, double px, double py, S fill) {
    if (x.ndim() != 2) throw DimensionError("bilinear_sample_at: expected [H,W]");
    const int h = x.dim(0), w = x.dim(1);
    int nbr[4];
    S wts[4];
    const S v = bilinear_fetch(x.values().data(), h, w, px, py, fill, nbr, wts);
    Tensor<S> y = Tensor<S>::scalar(v);
    if (grad_enabled_for(x)) {
        y.set_requires_grad(true);
        auto xd = x.data_ptr();
        auto yd = y.data_ptr();
        std::vector<int> nn(nbr, nbr + 4);
        std::vector<S> ww(wts, wts + 4);
        Tape<S>::current()->record([xd, yd, nn, ww] {
            if (!detail::grad_pending(yd)) return;
            xd->ensure_grad();
            for (int i = 0; i < 4; ++i)
                if (nn[i] >= 0) xd->grad[static_cast<std::size_t>(nn[i])] += yd->grad[0] * ww[i];
            detail::consume(yd);
        });
    }
    return y;
}

}  // namespace ogrg
