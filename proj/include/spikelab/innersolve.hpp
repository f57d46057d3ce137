#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>

#include "spikelab/core.hpp"
#include "spikelab/errors.hpp"
#include "spikelab/numerics/quadrature.hpp"

namespace spikelab::inner {

/// Nonlinearity of the core equation K'' = K - F(K) with
/// F(K) = S^{1-theta} K^theta exp((1-theta)(K-S)), i.e. F(K0) = K0^theta L0^{1-theta}.
///
/// The potential V(K) = K^2 - S^2 - 2 int_S^K F is evaluated as
/// 2 int_0^{K-S} q(S+u) du with q(z) = z - F(z); q is computed in a
/// cancellation-free form so V keeps full relative accuracy as K -> S.
class CoreNonlinearity {
public:
    CoreNonlinearity(double S, double theta) : S_(S), theta_(theta) {}

    double S() const { return S_; }
    double theta() const { return theta_; }

    double F(double K) const {
        return S_ * std::exp(theta_ * std::log(K / S_) + (1.0 - theta_) * (K - S_));
    }

    double dF(double K) const { return F(K) * (theta_ / K + (1.0 - theta_)); }

    /// q(S+u) = u - (F(S+u) - S).
    double q_of_u(double u) const {
        const double e = theta_ * std::log1p(u / S_) + (1.0 - theta_) * u;
        return u - S_ * std::expm1(e);
    }

    /// Far-field decay rate of K - S: sqrt(1 - F'(S)).
    double decay_rate() const { return std::sqrt((1.0 - theta_) * (1.0 - S_)); }

    /// G(K) = int_S^K F(z) dz by adaptive Gauss-Kronrod.
    double G(double K) const {
        if (K == S_) return 0.0;
        auto f = [this](double z) { return F(z); };
        return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, S_, K, 12, 1e-13);
    }

    /// Builds breakpoints for the cumulative potential up to u_max.
    void prepare_potential(double u_max) {
        breaks_.assign(1, 0.0);
        cumulative_.assign(1, 0.0);
        double b = S_;
        while (breaks_.back() < u_max) {
            const double width = std::min(b - breaks_.back(), 1.0);
            const double next = std::min(breaks_.back() + std::max(width, S_), u_max);
            cumulative_.push_back(cumulative_.back() + 2.0 * segment(breaks_.back(), next));
            breaks_.push_back(next);
            b = 2.0 * next;
        }
    }

    /// V at K = S + u; requires prepare_potential with u_max >= u.
    double V_of_u(double u) const {
        if (u <= 0.0) return 0.0;
        auto it = std::upper_bound(breaks_.begin(), breaks_.end(), u);
        const std::size_t j = static_cast<std::size_t>(std::distance(breaks_.begin(), it)) - 1;
        if (j + 1 >= breaks_.size() && u > breaks_.back() * (1.0 + 1e-14))
            throw Error("potential evaluated beyond prepared range");
        return cumulative_[j] + 2.0 * segment(breaks_[j], u);
    }

private:
    double segment(double u0, double u1) const {
        if (u1 <= u0) return 0.0;
        auto f = [this](double u) { return q_of_u(u); };
        return boost::math::quadrature::gauss<double, 20>::integrate(f, u0, u1);
    }

    double S_;
    double theta_;
    std::vector<double> breaks_;
    std::vector<double> cumulative_;
};

struct InnerOptions {
    double tol = 1e-9;            // turning-point / shooting tolerance
    double residual_tol = 1e-8;   // first-integral residual accepted on return when verify is set
    bool verify = false;          // recompute the residual by quadrature before returning
    double h = 0.0;               // sample spacing; 0 selects from the core width
    double Y = 0.0;               // minimum truncation length; 0 -> max(20, xi + 15)
    double far_tol = 1e-10;       // |K0(Y) - S| bound
    double Y_max = 400.0;
    double ode_tol = 1e-13;
};

/// Sampled half-line core solution for given (S, theta).
struct InnerProfile {
    double S = 0.0;
    double theta = 0.0;
    double xi = 0.0;          // K0(0)
    double Y = 0.0;           // truncation length
    double h = 0.0;           // uniform sample spacing
    double decay_rate = 0.0;  // K0 - S ~ exp(-decay_rate * y) beyond Y
    std::vector<double> y;
    std::vector<double> K0;
    std::vector<double> K0y;
    std::vector<double> L0;   // S exp(K0 - S)

    std::size_t size() const { return y.size(); }

    /// K0 at |y| with exponential continuation past Y.
    double K_at(double yy) const;
    double L_at(double yy) const { return S * std::exp(K_at(yy) - S); }
};

namespace detail {

using State2 = std::array<double, 2>;
using State1 = std::array<double, 1>;

inline double default_spacing(double xi, double theta) {
    const double core = 1.0 / (std::max(xi, 1.0) * std::sqrt(1.0 - theta));
    return std::min(0.02, core / 20.0);
}

/// Cubic Hermite on the uniform samples with the exact slopes K0y.
inline double hermite(const InnerProfile& p, double yy) {
    const std::size_t n = p.y.size();
    double t = yy / p.h;
    std::size_t i = static_cast<std::size_t>(t);
    if (i >= n - 1) i = n - 2;
    t -= static_cast<double>(i);
    const double h = p.h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    return h00 * p.K0[i] + h10 * h * p.K0y[i] + h01 * p.K0[i + 1] + h11 * h * p.K0y[i + 1];
}

}  // namespace detail

inline double InnerProfile::K_at(double yy) const {
    yy = std::abs(yy);
    if (yy >= Y) return S + (K0.back() - S) * std::exp(-decay_rate * (yy - Y));
    return detail::hermite(*this, yy);
}

inline double first_integral_residual(const InnerProfile& p);

/// Turning point xi > S of the first integral, V(xi) = 0.
inline double core_height(const CoreNonlinearity& nl) {
    const double S = nl.S();
    // Inflection z* (q changes sign) bounds xi from below.
    double u = 1e-6 * std::max(S, 1e-3);
    if (!(nl.q_of_u(u) > 0.0)) throw DegenerateSolutionError("no homoclinic core: q <= 0 near S");
    double u_hi = u;
    while (nl.q_of_u(u_hi) > 0.0) {
        u_hi *= 2.0;
        if (u_hi > 1e3) throw NoConvergenceError("inflection of the core profile not found");
    }
    // V > 0 on (0, u_lo] since q > 0 there; march outward until V < 0.
    double v_lo = 0.5 * u_hi;
    double v_hi = v_lo;
    auto V = [&](double uu) {
        CoreNonlinearity local = nl;
        local.prepare_potential(uu);
        return local.V_of_u(uu);
    };
    while (V(v_hi) > 0.0) {
        v_lo = v_hi;
        v_hi *= 1.25;
        if (v_hi > 1e3) throw NoConvergenceError("core height not bracketed");
    }
    std::uintmax_t iters = 200;
    auto tol = boost::math::tools::eps_tolerance<double>(52);
    auto [lo, hi] = boost::math::tools::toms748_solve(V, v_lo, v_hi, tol, iters);
    return S + 0.5 * (lo + hi);
}

/// Solves the core problem K0'' = K0 - F(K0), K0'(0) = 0, K0 -> S, returning
/// the nonconstant homoclinic-type solution sampled on [0, Y]. theta = 0 (pure
/// labor-driven production) is admitted as the limiting case.
inline InnerProfile solve_inner(double S, double theta, const InnerOptions& opt = {}) {
    if (!(S > 0.0 && S < 1.0)) throw ParameterDomainError("core amplitude S must lie in (0,1)");
    if (!(theta >= 0.0 && theta < 1.0)) throw ParameterDomainError("theta must lie in [0,1)");
    namespace odeint = boost::numeric::odeint;

    CoreNonlinearity nl(S, theta);
    const double kappa = nl.decay_rate();
    if (kappa < 1e-3) throw NoConvergenceError("core decay rate vanishes as S -> 1");

    const double xi = core_height(nl);
    if (!(xi - S > 1e-8 * std::max(1.0, S)))
        throw DegenerateSolutionError("core solver collapsed onto the constant solution K0 = S");
    nl.prepare_potential(xi - S);

    InnerProfile p;
    p.S = S;
    p.theta = theta;
    p.xi = xi;
    p.decay_rate = kappa;
    p.h = opt.h > 0.0 ? opt.h : detail::default_spacing(xi, theta);
    const double Y_min = opt.Y > 0.0 ? opt.Y : std::max(20.0, xi + 15.0);
    const double h = p.h;

    auto push = [&](double yy, double K, double Ky) {
        p.y.push_back(yy);
        p.K0.push_back(K);
        p.K0y.push_back(Ky);
        p.L0.push_back(S * std::exp(K - S));
    };

    // Core: second-order form from the turning point.
    auto rhs2 = [&nl](const detail::State2& x, detail::State2& dx, double) {
        dx[0] = x[1];
        dx[1] = nl.q_of_u(x[0] - nl.S());
    };
    auto stepper2 = odeint::make_controlled<odeint::runge_kutta_dopri5<detail::State2>>(
        opt.ode_tol, opt.ode_tol);
    detail::State2 x2{xi, 0.0};
    const double switch_u = 0.5 * (xi - S);
    std::size_t i = 0;
    push(0.0, xi, 0.0);
    while (x2[0] - S > switch_u) {
        const double y0 = h * static_cast<double>(i);
        odeint::integrate_adaptive(stepper2, rhs2, x2, y0, y0 + h, h / 4.0);
        ++i;
        push(h * static_cast<double>(i), x2[0], x2[1]);
        if (!(x2[1] < 0.0) || !(x2[0] > S))
            throw NoConvergenceError("core integration left the homoclinic orbit");
    }

    // Tail: s = log(K - S) obeys s' = -sqrt(V)/e^s, which is contracting
    // toward the far field.
    auto rhs1 = [&nl](const detail::State1& s, detail::State1& ds, double) {
        const double u = std::exp(s[0]);
        ds[0] = -std::sqrt(std::max(nl.V_of_u(u), 0.0)) / u;
    };
    auto stepper1 = odeint::make_controlled<odeint::runge_kutta_dopri5<detail::State1>>(
        opt.ode_tol, opt.ode_tol);
    detail::State1 s{std::log(x2[0] - S)};
    const std::size_t max_samples = static_cast<std::size_t>(opt.Y_max / h) + 2;
    while (true) {
        const double y_now = h * static_cast<double>(i);
        const double u_now = std::exp(s[0]);
        if (y_now >= Y_min && u_now <= opt.far_tol) break;
        if (p.y.size() >= max_samples) {
            std::ostringstream os;
            os << "far-field tolerance not reached by Y_max=" << opt.Y_max << " (S=" << S
               << ", theta=" << theta << ")";
            throw NoConvergenceError(os.str());
        }
        odeint::integrate_adaptive(stepper1, rhs1, s, y_now, y_now + h, h / 2.0);
        ++i;
        const double u = std::exp(s[0]);
        push(h * static_cast<double>(i), S + u, -std::sqrt(std::max(nl.V_of_u(u), 0.0)));
    }
    p.Y = p.y.back();
    if (opt.verify) {
        const double r = first_integral_residual(p);
        if (!(r <= opt.residual_tol)) {
            std::ostringstream os;
            os << "first-integral residual " << r << " exceeds " << opt.residual_tol;
            throw NoConvergenceError(os.str());
        }
    }
    return p;
}

/// max_i |K0y^2 - (K0^2 - S^2) + 2 int_S^{K0} F| over the samples; the inner
/// integral uses adaptive quadrature independent of the solver path.
inline double first_integral_residual(const InnerProfile& p) {
    CoreNonlinearity nl(p.S, p.theta);
    auto F = [&nl](double z) { return nl.F(z); };
    // Accumulate G inward from the far field: one short interval per sample.
    double worst = 0.0;
    double G = 0.0;
    for (std::size_t j = p.size(); j-- > 0;) {
        const double K = p.K0[j];
        G = j + 1 == p.size() ? nl.G(K)
                              : G + boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
                                        F, p.K0[j + 1], K, 5, 1e-14);
        const double r = p.K0y[j] * p.K0y[j] - (K * K - p.S * p.S) + 2.0 * G;
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

/// Core functional I(S) = -int_0^inf (a L0 - L0^2 - (a S - S^2)) dy.
///
/// Composite Simpson on the samples plus the analytic exponential tail past
/// Y. `b` does not enter I; it is accepted so call sites read like the
/// matching condition they feed.
inline double compute_I(const InnerProfile& p, double a, [[maybe_unused]] double b) {
    const double S = p.S;
    std::vector<double> f(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double dL = S * std::expm1(p.K0[i] - S);  // L0 - S
        f[i] = dL * (a - (p.L0[i] + S));
    }
    const double tail = f.back() / p.decay_rate;
    return -(numerics::simpson_uniform(f, p.h) + tail);
}

/// int_{-inf}^{inf} K0y^2 dy (twice the half-line value).
inline double gradient_energy(const InnerProfile& p) {
    std::vector<double> f(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) f[i] = p.K0y[i] * p.K0y[i];
    const double tail = f.back() / (2.0 * p.decay_rate);
    return 2.0 * (numerics::simpson_uniform(f, p.h) + tail);
}

/// int_0^inf sech^p(z) dz = (sqrt(pi)/2) Gamma(p/2) / Gamma((p+1)/2).
inline double sech_moment(double p) {
    if (!(p > 0.0)) throw ParameterDomainError("sech moment needs p > 0");
    const double half_sqrt_pi = 0.5 * std::sqrt(std::numbers::pi);
    if (p < 300.0) return half_sqrt_pi * std::tgamma(0.5 * p) / std::tgamma(0.5 * (p + 1.0));
    return half_sqrt_pi * std::exp(std::lgamma(0.5 * p) - std::lgamma(0.5 * (p + 1.0)));
}

/// Writes y, K0, L0 columns.
inline void write_profile_csv(const InnerProfile& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out.precision(17);
    out << "y,K0,L0\n";
    for (std::size_t i = 0; i < p.size(); ++i)
        out << p.y[i] << ',' << p.K0[i] << ',' << p.L0[i] << '\n';
}

// ---------------------------------------------------------------------------
// Sub-inner (large core height) reduction.

struct SubinnerSolution {
    double xi = 0.0;
    double S = 0.0;
    double residual_height = 0.0;    // relative residual of the core-height relation
    double residual_matching = 0.0;  // relative residual of the matching relation
    bool xi_small = false;           // xi < 3: the xi >> 1 reduction is suspect
    int iterations = 0;
};

namespace detail {
/// log S implied by the core-height relation xi^2 = 2/(1-theta) S^{1-theta} xi^theta e^{(1-theta) xi}.
inline double subinner_log_S(double xi, double theta) {
    return (std::log(0.5 * (1.0 - theta)) + (2.0 - theta) * std::log(xi)) / (1.0 - theta) - xi;
}
}  // namespace detail

/// Solves the coupled algebraic system for (xi, S) obtained from the
/// sub-inner sech profile. S is eliminated through the core-height relation
/// and the remaining scalar equation is solved by bracketed Newton.
inline SubinnerSolution subinner_asymptotics(double epsilon, double a, double b, double theta) {
    require_outer_valid(a, b);
    if (!(epsilon > 0.0)) throw ParameterDomainError("epsilon must be positive");
    if (!(theta > 0.0 && theta < 1.0)) throw ParameterDomainError("theta must lie in (0,1)");
    if (epsilon > 0.05) warn("sub-inner asymptotics used with epsilon > 0.05");
    if ((1.0 - theta) * std::abs(std::log(epsilon)) < 3.0)
        warn("sub-inner asymptotics need (1-theta)|ln eps| >> 1");

    const double sab = std::sqrt(a * b);
    const double lhs = sab * std::tan(sab);
    const double moment = sech_moment(4.0 / (1.0 - theta));
    const double log_c = std::log(epsilon * b * 2.0 * moment / (1.0 - theta));
    const double log_lhs = std::log(lhs);
    const double power = (2.0 - theta) / (1.0 - theta);

    // log of the matching relation divided by S:
    // log_c + log S - 2S + 2 xi - log xi - log(lhs) = 0.
    auto g = [&](double xi) {
        const double logS = detail::subinner_log_S(xi, theta);
        const double S = std::exp(logS);
        const double value = log_c + logS - 2.0 * S + 2.0 * xi - std::log(xi) - log_lhs;
        const double dlogS = power / xi - 1.0;
        const double deriv = dlogS - 2.0 * S * dlogS + 2.0 - 1.0 / xi;
        return std::make_pair(value, deriv);
    };

    double lo = 0.5, hi = 200.0;
    if (!(g(lo).first < 0.0 && g(hi).first > 0.0))
        throw BracketError("sub-inner system: no sign change for xi in [0.5, 200]");
    std::uintmax_t iters = 200;
    const double guess = 0.5 * (lo + hi);
    const double xi = boost::math::tools::newton_raphson_iterate(g, guess, lo, hi, 50, iters);
    if (iters >= 200) throw NoConvergenceError("sub-inner Newton iteration did not converge");

    SubinnerSolution out;
    out.xi = xi;
    out.S = std::exp(detail::subinner_log_S(xi, theta));
    out.iterations = static_cast<int>(iters);
    const double S = out.S;
    const double height_rhs =
        2.0 / (1.0 - theta) * std::pow(S, 1.0 - theta) * std::pow(xi, theta) *
        std::exp((1.0 - theta) * xi);
    out.residual_height = std::abs(xi * xi - height_rhs) / (xi * xi);
    const double match_rhs = epsilon * b * 2.0 * S * S * std::exp(-2.0 * S) * std::exp(2.0 * xi) /
                             ((1.0 - theta) * xi) * moment;
    out.residual_matching = std::abs(S * lhs - match_rhs) / (S * lhs);
    out.xi_small = xi < 3.0;
    return out;
}

}  // namespace spikelab::inner
