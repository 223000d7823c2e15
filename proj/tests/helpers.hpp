#pragma once

// Shared test utilities: tensor literals, elementwise gap measures, and a
// central-difference driver for auditing analytic gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cim/tensor.hpp"

namespace test_util {

template <class T>
cim::BasicTensor<T> tensor(const cim::Shape& s, std::vector<T> v) {
    return cim::BasicTensor<T>::from(s, std::move(v));
}

// Largest elementwise |a - b| over two equally sized indexables.
template <class A, class B>
double max_abs_gap(const A& a, const B& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

// max |a - b| scaled by the largest reference magnitude, so near-zero entries
// do not blow up the measure.
template <class A, class B>
double rel_gap(const A& a, const B& ref) {
    double scale = 1e-12;
    for (size_t i = 0; i < ref.size(); ++i)
        scale = std::max(scale, std::abs(static_cast<double>(ref[i])));
    return max_abs_gap(a, ref) / scale;
}

// Central-difference audit of an analytic gradient. `eval` recomputes the
// scalar objective from the leaf's current values; returns the worst
// per-coordinate gap scaled by the gradient's overall magnitude.
inline double worst_grad_gap(std::span<double> leaf, std::span<const double> analytic,
                             const std::function<double()>& eval, double step = 1e-3) {
    double scale = 1e-9;
    for (double a : analytic) scale = std::max(scale, std::abs(a));
    double worst = 0.0;
    for (size_t i = 0; i < leaf.size(); ++i) {
        const double keep = leaf[i];
        leaf[i] = keep + step;
        const double up = eval();
        leaf[i] = keep - step;
        const double dn = eval();
        leaf[i] = keep;
        worst = std::max(worst, std::abs((up - dn) / (2.0 * step) - analytic[i]));
    }
    return worst / scale;
}

}  // namespace test_util
