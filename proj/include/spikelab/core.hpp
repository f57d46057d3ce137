#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spikelab/errors.hpp"

namespace spikelab {

/// Parameters of the dimensional labor-capital model on (-ell_b, ell_b).
///
/// Units are documentation only: diffusivities are length^2/time, a_dim and
/// delta are rates, theta and c are dimensionless fractions.
struct DimensionalParams {
    double d_l = 1.0;     // labor diffusivity
    double d_k = 1.0;     // capital diffusivity
    double chi = 1.0;     // capital-induced migration strength
    double a_dim = 1.0;   // intrinsic labor growth rate
    double b_dim = 1.0;   // intraspecific competition
    double delta = 1.0;   // capital depreciation
    double theta = 0.5;   // capital elasticity of output
    double c = 0.5;       // consumption rate
    double ell_b = 1.0;   // half-domain length
};

/// Nondimensional parameter bundle (a, b, theta, epsilon, tau).
///
/// `outer_valid` records whether a*b < pi^2/4, the condition for a positive
/// cosine outer solution. It is a flag rather than an error: the simulator
/// runs without it, the asymptotic modules require it.
struct ModelParams {
    double a = 1.0;
    double b = 1.0;
    double theta = 0.5;
    double epsilon = 0.01;
    double tau = 1.0;
    bool outer_valid = true;

    double sqrt_ab() const { return std::sqrt(a * b); }
};

inline constexpr double kOuterLimit = std::numbers::pi * std::numbers::pi / 4.0;

inline bool outer_is_valid(double a, double b) { return a * b < kOuterLimit; }

namespace detail {
inline void require(bool ok, const std::string& what) {
    if (!ok) throw ParameterDomainError(what);
}
inline bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }
}  // namespace detail

/// Validated construction of ModelParams.
inline ModelParams make_model_params(double a, double b, double theta, double epsilon,
                                     double tau) {
    detail::require(detail::finite_positive(a), "a must be positive");
    detail::require(detail::finite_positive(b), "b must be positive");
    detail::require(std::isfinite(theta) && theta > 0.0 && theta < 1.0,
                    "theta must lie in (0,1)");
    detail::require(detail::finite_positive(epsilon), "epsilon must be positive");
    detail::require(std::isfinite(tau) && tau >= 0.0, "tau must be nonnegative");
    return ModelParams{a, b, theta, epsilon, tau, outer_is_valid(a, b)};
}

/// Throws unless a*b < pi^2/4. Used by every operation built on the cosine
/// outer solution.
inline void require_outer_valid(double a, double b) {
    if (!outer_is_valid(a, b)) {
        std::ostringstream os;
        os << "a*b = " << a * b << " violates a*b < pi^2/4";
        throw ParameterDomainError(os.str());
    }
}

/// Maps dimensional parameters onto the normalized system on (-1, 1).
inline ModelParams nondimensionalize(const DimensionalParams& p) {
    using detail::finite_positive;
    using detail::require;
    require(finite_positive(p.d_l) && finite_positive(p.d_k), "diffusivities must be positive");
    require(finite_positive(p.chi), "chi must be positive");
    require(finite_positive(p.a_dim) && finite_positive(p.b_dim), "a_dim, b_dim must be positive");
    require(finite_positive(p.delta), "delta must be positive");
    require(finite_positive(p.ell_b), "ell_b must be positive");
    require(std::isfinite(p.theta) && p.theta > 0.0 && p.theta < 1.0, "theta must lie in (0,1)");
    require(std::isfinite(p.c) && p.c > 0.0 && p.c < 1.0, "c must lie in (0,1)");

    const double savings = std::pow((1.0 - p.c) / p.delta, 1.0 / (1.0 - p.theta));
    const double ell_tilde = std::sqrt(p.delta / p.d_l) * p.ell_b;
    const double ell2 = ell_tilde * ell_tilde;

    ModelParams m;
    m.tau = ell2;
    m.a = p.a_dim * p.chi * savings / (p.b_dim * p.d_l);
    m.b = p.b_dim * p.d_l * ell2 / (p.chi * p.delta * savings);
    m.epsilon = std::sqrt(p.d_k / (p.d_l * ell2));
    m.theta = p.theta;
    m.outer_valid = outer_is_valid(m.a, m.b);
    return m;
}

/// Uniform cell-centered grid on [-1, 1].
struct Grid {
    std::size_t n = 0;
    double dx = 0.0;
    std::vector<double> x;

    std::size_t size() const { return n; }
};

/// Builds the grid; warns when the O(epsilon) core is under-resolved
/// (n < 16/epsilon). Pass epsilon <= 0 to skip the check.
inline Grid make_grid(std::size_t n, double epsilon = 0.0) {
    if (n < 4) throw ParameterDomainError("grid needs at least 4 cells");
    Grid g;
    g.n = n;
    g.dx = 2.0 / static_cast<double>(n);
    g.x.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.x[i] = -1.0 + (static_cast<double>(i) + 0.5) * g.dx;
    if (epsilon > 0.0 && static_cast<double>(n) < 16.0 / epsilon) {
        std::ostringstream os;
        os << "grid with n=" << n << " under-resolves the spike core (need n >= "
           << 16.0 / epsilon << " for epsilon=" << epsilon << ")";
        warn(os.str());
    }
    return g;
}

/// Labor and capital samples, one value per grid cell.
struct FieldPair {
    std::vector<double> l;
    std::vector<double> k;

    std::size_t size() const { return l.size(); }

    bool is_positive() const {
        for (double v : l)
            if (!(v > 0.0) || !std::isfinite(v)) return false;
        for (double v : k)
            if (!(v > 0.0) || !std::isfinite(v)) return false;
        return true;
    }
};

inline FieldPair homogeneous_fields(std::size_t n, double l0, double k0) {
    return FieldPair{std::vector<double>(n, l0), std::vector<double>(n, k0)};
}

}  // namespace spikelab
