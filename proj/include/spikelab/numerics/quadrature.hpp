#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spikelab/errors.hpp"

namespace spikelab::numerics {

/// Composite Simpson rule on uniformly spaced samples. An even sample count
/// is handled by closing the last three intervals with Simpson's 3/8 rule.
template <typename T>
T simpson_uniform(std::span<const T> f, double h) {
    const std::size_t n = f.size();
    if (n < 2) return T{};
    if (n == 2) return 0.5 * h * (f[0] + f[1]);
    if (n == 3) return h / 3.0 * (f[0] + 4.0 * f[1] + f[2]);
    std::size_t m = n;  // number of samples covered by the 1/3 rule
    T tail{};
    if (n % 2 == 0) {
        m = n - 3;
        tail = 3.0 * h / 8.0 * (f[n - 4] + 3.0 * f[n - 3] + 3.0 * f[n - 2] + f[n - 1]);
    }
    T s = f[0] + f[m - 1];
    for (std::size_t i = 1; i + 1 < m; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * f[i];
    return h / 3.0 * s + tail;
}

template <typename T>
T simpson_uniform(const std::vector<T>& f, double h) {
    return simpson_uniform<T>(std::span<const T>(f), h);
}

/// Running integral F[i] = int_0^{y_i} f on uniform samples, using the
/// three-point quadratic rule on each interval (third-order accurate).
inline std::vector<double> cumulative_uniform(std::span<const double> f, double h) {
    const std::size_t n = f.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    if (n == 2) {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double piece;
        if (i + 2 < n)
            piece = h * (5.0 * f[i] + 8.0 * f[i + 1] - f[i + 2]) / 12.0;
        else
            piece = h * (-f[i - 1] + 8.0 * f[i] + 5.0 * f[i + 1]) / 12.0;
        out[i + 1] = out[i] + piece;
    }
    return out;
}

/// Quadrature weights of the composite trapezoid rule on uniform samples.
inline std::vector<double> trapezoid_weights(std::size_t n, double h) {
    std::vector<double> w(n, h);
    if (n > 0) {
        w.front() = 0.5 * h;
        w.back() = 0.5 * h;
    }
    return w;
}

}  // namespace spikelab::numerics
