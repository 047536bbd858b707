#pragma once

#include <functional>
#include <vector>

#include "ftwt/tensor.hpp"

// Central-difference gradient oracle. Runs in double precision so the
// truncation and roundoff floor sits far below the 1e-6 acceptance line.
// Kept independent of any analytic backward: it only re-evaluates forwards.

namespace ftwt {

// Scalar-valued function of the tensors currently referenced by `params`.
using ScalarFn = std::function<double()>;

// Perturbs every element of every parameter tensor in place and compares
// (f(x+eps)-f(x-eps))/(2 eps) against the matching analytic gradient.
// Error metric: max |analytic - numeric| scaled by max(1, largest |numeric|),
// so a doubled gradient on an O(1) problem reads as an error near 1.
inline double finite_difference_check(const std::vector<TensorT<double>*>& params,
                                      const ScalarFn& f,
                                      const std::vector<const TensorT<double>*>& analytic,
                                      double eps = 1e-5) {
    if (params.size() != analytic.size())
        throw ConfigError("finite_difference_check: parameter/gradient count mismatch");
    double max_abs_num = 0.0;
    double max_diff = 0.0;
    for (size_t t = 0; t < params.size(); ++t) {
        TensorT<double>& p = *params[t];
        const TensorT<double>& g = *analytic[t];
        if (!p.same_shape(g))
            throw ConfigError("finite_difference_check: gradient shape mismatch");
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + eps;
            const double up = f();
            p.data[i] = saved - eps;
            const double dn = f();
            p.data[i] = saved;
            const double numeric = (up - dn) / (2.0 * eps);
            max_abs_num = std::max(max_abs_num, std::abs(numeric));
            max_diff = std::max(max_diff, std::abs(numeric - g.data[i]));
        }
    }
    return max_diff / std::max(1.0, max_abs_num);
}

// Fills a tensor with uniform values in [-1,1) from any generator with
// next_double(); keeps test setup one-liners.
template <typename Rng>
TensorT<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    TensorT<double> t(std::move(shape));
    for (double& v : t.data) v = scale * (2.0 * rng.next_double() - 1.0);
    return t;
}

} // namespace ftwt
