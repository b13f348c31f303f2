#pragma once

#include <cstring>

#include "ogrg/tensor.hpp"

// Central finite-difference verification of reverse-mode gradients.
// Everything here runs in f64; the training dtype is f32.

namespace ogrg {

// f must be a deterministic scalar-valued function of x that builds its
// graph through the active tape. Returns max over coordinates of
// |analytic - numeric| / max(1, |numeric|).
template <typename F>
double finite_diff_check(F f, Tensor<double>& x, double eps = 1e-5) {
    if (eps < 1e-7 || eps > 1e-3) throw ParameterError("finite_diff_check: eps outside [1e-7, 1e-3]");
    x.set_requires_grad(true);
    x.zero_grad();

    double base1, base2;
    {
        NoGrad<double> ng;
        base1 = f(x)[0];
        base2 = f(x)[0];
    }
    if (std::memcmp(&base1, &base2, sizeof(double)) != 0)
        throw ContractError("finite_diff_check: function is not deterministic");

    {
        Tape<double> tape;
        Tensor<double> y = f(x);
        if (y.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
        tape.backward(y);
    }
    std::vector<double> analytic = x.grad();

    double max_rel = 0.0;
    NoGrad<double> ng;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double up = f(x)[0];
        x[i] = keep - eps;
        const double dn = f(x)[0];
        x[i] = keep;
        const double numeric = (up - dn) / (2.0 * eps);
        const double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        max_rel = std::max(max_rel, rel);
    }
    x.zero_grad();
    return max_rel;
}

}  // namespace ogrg
