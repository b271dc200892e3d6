#pragma once

// Central finite differences against a rebuildable forward pass. The probe
// only ever evaluates forward values, so it is independent of the
// reverse-mode path it is used to verify.

#include <cmath>
#include <functional>
#include <vector>

#include "rscn/tensor.hpp"

namespace rscn {

// d(build().value)/d(leaf[elem]) via (f(x+h) - f(x-h)) / 2h.
inline double fd_derivative(const std::function<Tensor()>& build, Tensor leaf, size_t elem,
                            double h = 1e-5) {
    auto& v = leaf.values_mut();
    const double saved = v[elem];
    v[elem] = saved + h;
    const double hi = build().value();
    v[elem] = saved - h;
    const double lo = build().value();
    v[elem] = saved;
    return (hi - lo) / (2.0 * h);
}

inline std::vector<double> fd_gradient(const std::function<Tensor()>& build, Tensor leaf,
                                       double h = 1e-5) {
    std::vector<double> g(leaf.numel());
    for (size_t i = 0; i < g.size(); ++i) g[i] = fd_derivative(build, leaf, i, h);
    return g;
}

// Relative error with a small floor so near-zero gradients compare on an
// absolute scale instead of dividing by noise.
inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-6) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
    return m;
}

}  // namespace rscn
