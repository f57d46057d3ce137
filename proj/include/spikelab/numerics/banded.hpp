#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <sstream>
#include <type_traits>
#include <vector>

#include <lapacke.h>

#include "spikelab/errors.hpp"

namespace spikelab::numerics {

/// Square banded matrix with `kl` sub- and `ku` super-diagonals, stored in
/// LAPACK general-band layout with room for the fill-in of partial pivoting.
template <typename T>
class BandedMatrix {
    static_assert(std::is_same_v<T, double> || std::is_same_v<T, std::complex<double>>);

public:
    BandedMatrix() = default;
    BandedMatrix(std::size_t n, int kl, int ku)
        : n_(n), kl_(kl), ku_(ku), ldab_(2 * kl + ku + 1), ab_(n * ldab_, T{}) {}

    std::size_t size() const { return n_; }
    int lower_bandwidth() const { return kl_; }
    int upper_bandwidth() const { return ku_; }

    bool in_band(std::size_t i, std::size_t j) const {
        const auto d = static_cast<long>(i) - static_cast<long>(j);
        return d <= kl_ && -d <= ku_;
    }

    T& at(std::size_t i, std::size_t j) { return ab_[index(i, j)]; }
    T at(std::size_t i, std::size_t j) const {
        return in_band(i, j) ? ab_[index(i, j)] : T{};
    }
    void add(std::size_t i, std::size_t j, T v) { ab_[index(i, j)] += v; }

    void set_zero() { std::fill(ab_.begin(), ab_.end(), T{}); }

    /// y = A x
    void multiply(std::span<const T> x, std::span<T> y) const {
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t j0 = i > static_cast<std::size_t>(kl_) ? i - kl_ : 0;
            const std::size_t j1 = std::min(n_ - 1, i + ku_);
            T s{};
            for (std::size_t j = j0; j <= j1; ++j) s += ab_[index(i, j)] * x[j];
            y[i] = s;
        }
    }

    /// Max absolute row sum.
    double norm_inf() const {
        double best = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t j0 = i > static_cast<std::size_t>(kl_) ? i - kl_ : 0;
            const std::size_t j1 = std::min(n_ - 1, i + ku_);
            double s = 0.0;
            for (std::size_t j = j0; j <= j1; ++j) s += std::abs(ab_[index(i, j)]);
            best = std::max(best, s);
        }
        return best;
    }

    const std::vector<T>& raw() const { return ab_; }
    std::vector<T>& raw() { return ab_; }
    int leading_dimension() const { return ldab_; }

private:
    std::size_t index(std::size_t i, std::size_t j) const {
        return static_cast<std::size_t>(kl_ + ku_) + i - j + j * static_cast<std::size_t>(ldab_);
    }

    std::size_t n_ = 0;
    int kl_ = 0;
    int ku_ = 0;
    int ldab_ = 1;
    std::vector<T> ab_;
};

/// LU factorization of a banded matrix (LAPACK gbtrf/gbtrs).
template <typename T>
class BandedLU {
public:
    explicit BandedLU(BandedMatrix<T> a) : a_(std::move(a)), ipiv_(a_.size()) {
        const auto n = static_cast<lapack_int>(a_.size());
        lapack_int info = 0;
        if constexpr (std::is_same_v<T, double>) {
            info = LAPACKE_dgbtrf(LAPACK_COL_MAJOR, n, n, a_.lower_bandwidth(),
                                  a_.upper_bandwidth(), a_.raw().data(), a_.leading_dimension(),
                                  ipiv_.data());
        } else {
            info = LAPACKE_zgbtrf(LAPACK_COL_MAJOR, n, n, a_.lower_bandwidth(),
                                  a_.upper_bandwidth(),
                                  reinterpret_cast<lapack_complex_double*>(a_.raw().data()),
                                  a_.leading_dimension(), ipiv_.data());
        }
        if (info != 0) {
            std::ostringstream os;
            os << "banded LU failed (info=" << info << ")";
            throw Error(os.str());
        }
    }

    void solve_in_place(std::span<T> b) const {
        const auto n = static_cast<lapack_int>(a_.size());
        lapack_int info = 0;
        if constexpr (std::is_same_v<T, double>) {
            info = LAPACKE_dgbtrs(LAPACK_COL_MAJOR, 'N', n, a_.lower_bandwidth(),
                                  a_.upper_bandwidth(), 1, a_.raw().data(),
                                  a_.leading_dimension(), ipiv_.data(), b.data(), n);
        } else {
            info = LAPACKE_zgbtrs(LAPACK_COL_MAJOR, 'N', n, a_.lower_bandwidth(),
                                  a_.upper_bandwidth(), 1,
                                  reinterpret_cast<const lapack_complex_double*>(a_.raw().data()),
                                  a_.leading_dimension(), ipiv_.data(),
                                  reinterpret_cast<lapack_complex_double*>(b.data()), n);
        }
        if (info != 0) throw Error("banded solve failed");
    }

    std::vector<T> solve(std::span<const T> b) const {
        std::vector<T> x(b.begin(), b.end());
        solve_in_place(x);
        return x;
    }

private:
    BandedMatrix<T> a_;
    std::vector<lapack_int> ipiv_;
};

}  // namespace spikelab::numerics
