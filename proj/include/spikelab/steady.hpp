#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>
#include <json.hpp>

#include "spikelab/core.hpp"
#include "spikelab/errors.hpp"
#include "spikelab/innersolve.hpp"

namespace spikelab::steady {

struct MatchOptions {
    inner::InnerOptions inner;
    double S_max = 0.9;
    int max_iter = 100;
    int digits = 48;  // bits of relative accuracy requested from the root finder
    double S_guess = 0.0;  // warm start: bracket grown outward from here when positive
};

struct MatchResult {
    double S = 0.0;
    double I = 0.0;         // core functional at S
    double residual = 0.0;  // |lhs - rhs| / lhs of the matching relation
    int iterations = 0;
    inner::InnerProfile profile;
};

namespace detail {

/// Solves S * weight = eps * b * I(S) for S in [eps/10, S_max].
inline MatchResult solve_matching(double weight, double epsilon, double a, double b, double theta,
                                  const MatchOptions& opt) {
    auto g = [&](double S) {
        const auto p = inner::solve_inner(S, theta, opt.inner);
        return S * weight - epsilon * b * inner::compute_I(p, a, b);
    };
    double lo = epsilon / 10.0;
    double hi = opt.S_max;
    if (!(lo < hi)) throw BracketError("matching bracket is empty (epsilon too large)");
    double g_lo, g_hi;
    if (opt.S_guess > lo && opt.S_guess < hi) {
        // g is increasing through its root: march outward from the guess.
        const double lo_limit = lo, hi_limit = hi;
        double step = 0.02 * opt.S_guess;
        lo = std::max(lo_limit, opt.S_guess - step);
        hi = std::min(hi_limit, opt.S_guess + step);
        g_lo = g(lo);
        g_hi = g(hi);
        while (g_lo > 0.0 && lo > lo_limit) {
            step *= 2.0;
            hi = lo;
            g_hi = g_lo;
            lo = std::max(lo_limit, lo - step);
            g_lo = g(lo);
        }
        while (g_hi < 0.0 && hi < hi_limit) {
            step *= 2.0;
            lo = hi;
            g_lo = g_hi;
            hi = std::min(hi_limit, hi + step);
            g_hi = g(hi);
        }
    } else {
        g_lo = g(lo);
        g_hi = g(hi);
    }
    if (!(g_lo < 0.0 && g_hi > 0.0)) {
        std::ostringstream os;
        os << "matching condition has no sign change on [" << lo << ", " << hi << "]";
        throw BracketError(os.str());
    }
    std::uintmax_t iters = static_cast<std::uintmax_t>(opt.max_iter);
    auto tol = boost::math::tools::eps_tolerance<double>(opt.digits);
    auto [s0, s1] = boost::math::tools::toms748_solve(g, lo, hi, g_lo, g_hi, tol, iters);
    if (iters >= static_cast<std::uintmax_t>(opt.max_iter))
        throw NoConvergenceError("matching iteration did not converge");

    MatchResult r;
    r.S = 0.5 * (s0 + s1);
    r.profile = inner::solve_inner(r.S, theta, opt.inner);
    r.I = inner::compute_I(r.profile, a, b);
    r.iterations = static_cast<int>(iters);
    const double lhs = r.S * weight;
    r.residual = std::abs(lhs - epsilon * b * r.I) / lhs;
    return r;
}

}  // namespace detail

/// Background amplitude S of the centered spike: S sqrt(ab) tan(sqrt(ab)) = eps b I(S).
inline MatchResult match_amplitude(double epsilon, double a, double b, double theta,
                                   const MatchOptions& opt = {}) {
    require_outer_valid(a, b);
    if (!(epsilon > 0.0)) throw ParameterDomainError("epsilon must be positive");
    const double sab = std::sqrt(a * b);
    return detail::solve_matching(sab * std::tan(sab), epsilon, a, b, theta, opt);
}

/// tan(sqrt(ab)(1 - x0)) + tan(sqrt(ab)(1 + x0)), the outer flux weight of a spike at x0.
inline double offcenter_weight(double x0, double a, double b) {
    const double sab = std::sqrt(a * b);
    return -(std::tan(sab * (x0 - 1.0)) - std::tan(sab * (x0 + 1.0)));
}

inline void require_offcenter_valid(double x0, double a, double b) {
    require_outer_valid(a, b);
    if (!(std::abs(x0) < 1.0)) throw ParameterDomainError("spike center must lie in (-1,1)");
    if (!(std::sqrt(a * b) * (1.0 + std::abs(x0)) < std::numbers::pi / 2.0)) {
        std::ostringstream os;
        os << "outer cosines change sign for x0=" << x0 << " (need sqrt(ab)(1+|x0|) < pi/2)";
        throw ParameterDomainError(os.str());
    }
}

/// Amplitude S0 of a quasi-equilibrium spike centered at x0:
/// 2 eps b I(S0) = S0 sqrt(ab) (tan(sqrt(ab)(1-x0)) + tan(sqrt(ab)(1+x0))).
inline MatchResult offcenter_amplitude(double x0, double epsilon, double a, double b,
                                       double theta, const MatchOptions& opt = {}) {
    require_offcenter_valid(x0, a, b);
    if (!(epsilon > 0.0)) throw ParameterDomainError("epsilon must be positive");
    const double w = offcenter_weight(x0, a, b);
    if (!(w > 0.0)) throw ParameterDomainError("tangent combination is nonpositive");
    return detail::solve_matching(0.5 * std::sqrt(a * b) * w, epsilon, a, b, theta, opt);
}

struct SteadyState {
    ModelParams params;
    double x0 = 0.0;
    double S = 0.0;
    inner::InnerProfile inner;
    Grid grid;
    std::vector<double> l_s;
    std::vector<double> k_s;
    double far_field_gap = 0.0;  // max |l_s - k_s| at |x - x0| > 10 eps
    bool far_field_ok = true;    // far_field_gap <= eps

    FieldPair fields() const { return FieldPair{l_s, k_s}; }
};

/// Outer cosine branch through S0 at x0, flat at x = +-1.
inline double outer_branch(double x, double x0, double S0, double sab) {
    if (x >= x0) return S0 * std::cos(sab * (x - 1.0)) / std::cos(sab * (x0 - 1.0));
    return S0 * std::cos(sab * (x + 1.0)) / std::cos(sab * (x0 + 1.0));
}

/// Additive composite of the inner core and the outer cosines, sampled on `grid`.
inline SteadyState build_steady_state(const ModelParams& params, const Grid& grid, double x0 = 0.0,
                                      const MatchOptions& opt = {}) {
    const double eps = params.epsilon;
    MatchResult m = offcenter_amplitude(x0, eps, params.a, params.b, params.theta, opt);
    const double sab = params.sqrt_ab();

    SteadyState st;
    st.params = params;
    st.x0 = x0;
    st.S = m.S;
    st.grid = grid;
    st.l_s.resize(grid.n);
    st.k_s.resize(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) {
        const double x = grid.x[i];
        const double y = (x - x0) / eps;
        const double K = m.profile.K_at(y);
        const double outer = outer_branch(x, x0, m.S, sab) - m.S;
        st.k_s[i] = K + outer;
        st.l_s[i] = m.S * std::exp(K - m.S) + outer;
        if (std::abs(x - x0) > 10.0 * eps)
            st.far_field_gap = std::max(st.far_field_gap, std::abs(st.l_s[i] - st.k_s[i]));
    }
    st.far_field_ok = st.far_field_gap <= eps;
    st.inner = std::move(m.profile);
    return st;
}

inline void write_steady_csv(const SteadyState& st, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out.precision(17);
    out << "x,l_s,k_s\n";
    for (std::size_t i = 0; i < st.grid.n; ++i)
        out << st.grid.x[i] << ',' << st.l_s[i] << ',' << st.k_s[i] << '\n';
}

inline nlohmann::json steady_metadata(const SteadyState& st) {
    return nlohmann::json{{"epsilon", st.params.epsilon}, {"a", st.params.a},
                          {"b", st.params.b},             {"theta", st.params.theta},
                          {"x0", st.x0},                  {"S", st.S},
                          {"xi", st.inner.xi}};
}

inline void write_steady_json(const SteadyState& st, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out << steady_metadata(st).dump(2) << '\n';
}

}  // namespace spikelab::steady
