#pragma once

#include <span>
#include <vector>

#include "spikelab/errors.hpp"

namespace spikelab::numerics {

/// Thomas algorithm for a tridiagonal system.
///
/// `lower[i]` multiplies x[i-1] in row i (lower[0] unused), `upper[i]`
/// multiplies x[i+1] (upper[n-1] unused). Works for real and complex T.
/// No pivoting: callers must supply diagonally dominant or otherwise safe
/// matrices.
template <typename T>
void solve_tridiagonal(std::span<const T> lower, std::span<const T> diag,
                       std::span<const T> upper, std::span<const T> rhs, std::span<T> out) {
    const std::size_t n = diag.size();
    if (n == 0) return;
    std::vector<T> c(n);
    std::vector<T> d(n);
    T denom = diag[0];
    if (denom == T{}) throw Error("tridiagonal solve: zero pivot");
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for (std::size_t i = 1; i < n; ++i) {
        denom = diag[i] - lower[i] * c[i - 1];
        if (denom == T{}) throw Error("tridiagonal solve: zero pivot");
        c[i] = (i + 1 < n) ? upper[i] / denom : T{};
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    out[n - 1] = d[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) out[i] = d[i] - c[i] * out[i + 1];
}

template <typename T>
std::vector<T> solve_tridiagonal(const std::vector<T>& lower, const std::vector<T>& diag,
                                 const std::vector<T>& upper, const std::vector<T>& rhs) {
    std::vector<T> out(diag.size());
    solve_tridiagonal<T>(std::span<const T>(lower), std::span<const T>(diag),
                         std::span<const T>(upper), std::span<const T>(rhs), std::span<T>(out));
    return out;
}

}  // namespace spikelab::numerics
