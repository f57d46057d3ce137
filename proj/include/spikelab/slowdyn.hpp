#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "spikelab/core.hpp"
#include "spikelab/errors.hpp"
#include "spikelab/innersolve.hpp"
#include "spikelab/pdesim.hpp"
#include "spikelab/stability.hpp"
#include "spikelab/steady.hpp"

namespace spikelab::slowdyn {

/// How the slow-time velocity is converted to the simulator's time t.
/// fast_time: dx0/dt carries eps^2 (slow time T = eps^3 t with the 1/eps of the
/// outer flux). slow_time_literal: the slow-time right side multiplied by eps^3
/// with the 1/eps dropped, kept only for comparison.
enum class TimeReading { fast_time, slow_time_literal };

inline std::string to_string(TimeReading r) {
    return r == TimeReading::fast_time ? "fast_time" : "slow_time_literal";
}

struct DriftOptions {
    steady::MatchOptions match;
    TimeReading reading = TimeReading::fast_time;
    double rtol = 1e-8;
    double atol = 1e-12;
};

struct DriftState {
    double x0 = 0.0;
    double S0 = 0.0;
    double T = 0.0;  // slow time eps^3 t
    inner::InnerProfile profile;
};

struct DriftEvaluation {
    double x0 = 0.0;
    double velocity = 0.0;  // dx0/dt
    double S0 = 0.0;
    double P_inf = 0.0;
    double energy = 0.0;    // int_R K0y^2
    double residual = 0.0;  // relative residual of the amplitude relation
};

inline double tangent_sum(double x0, double a, double b) {
    const double sab = std::sqrt(a * b);
    return std::tan(sab * (x0 + 1.0)) + std::tan(sab * (x0 - 1.0));
}

inline DriftEvaluation evaluate_drift(double x0, double epsilon, double a, double b, double theta,
                                      const DriftOptions& opt = {}) {
    const auto m = steady::offcenter_amplitude(x0, epsilon, a, b, theta, opt.match);
    DriftEvaluation e;
    e.x0 = x0;
    e.S0 = m.S;
    e.residual = m.residual;
    e.P_inf = stability::compute_adjoint_P(m.profile).P_inf;
    e.energy = inner::gradient_energy(m.profile);
    const double scale = opt.reading == TimeReading::fast_time ? epsilon * epsilon
                                                               : epsilon * epsilon * epsilon;
    e.velocity = scale * e.P_inf / e.energy * m.S * std::sqrt(a * b) * tangent_sum(x0, a, b);
    return e;
}

/// dx0/dt of a quasi-equilibrium spike centered at x0.
inline double drift_velocity(double x0, double epsilon, double a, double b, double theta,
                             const DriftOptions& opt = {}) {
    return evaluate_drift(x0, epsilon, a, b, theta, opt).velocity;
}

/// Decay rate of x0 about the centered equilibrium:
/// eps^2 P_inf / int K0y^2 * 2 S ab / cos^2 sqrt(ab).
inline double linear_growth_rate(double epsilon, double a, double b, double theta,
                                 const steady::MatchOptions& mopt = {}) {
    const auto m = steady::match_amplitude(epsilon, a, b, theta, mopt);
    const double P_inf = stability::compute_adjoint_P(m.profile).P_inf;
    const double E = inner::gradient_energy(m.profile);
    const double c = std::cos(std::sqrt(a * b));
    return epsilon * epsilon * P_inf / E * (2.0 * m.S * a * b / (c * c));
}

struct DriftTrajectory {
    std::vector<double> t;
    std::vector<double> x0;
    std::vector<double> S0;
    std::vector<double> velocity;
    std::vector<double> residual;
    bool completed = true;
    std::string failure;  // set when the amplitude relation could not be solved
};

/// Integrates dx0/dt with an adaptive Dormand-Prince pair, re-solving the
/// amplitude relation at every stage (warm-started from the last solution).
/// Output at `n_out` equally spaced times in [0, t_end].
inline DriftTrajectory integrate_drift(double x0_init, double t_end, double epsilon, double a,
                                       double b, double theta, const DriftOptions& opt = {},
                                       std::size_t n_out = 201) {
    steady::require_offcenter_valid(x0_init, a, b);
    if (!(t_end > 0.0)) throw ParameterDomainError("t_end must be positive");
    if (n_out < 2) n_out = 2;
    DriftTrajectory tr;
    DriftOptions o = opt;
    auto record = [&](double t, const DriftEvaluation& e) {
        tr.t.push_back(t);
        tr.x0.push_back(e.x0);
        tr.S0.push_back(e.S0);
        tr.velocity.push_back(e.velocity);
        tr.residual.push_back(e.residual);
    };

    DriftEvaluation first = evaluate_drift(x0_init, epsilon, a, b, theta, o);
    if (x0_init == 0.0) {  // equilibrium: nothing to integrate
        for (std::size_t k = 0; k < n_out; ++k)
            record(t_end * static_cast<double>(k) / static_cast<double>(n_out - 1), first);
        return tr;
    }
    o.match.S_guess = first.S0;

    using State = std::array<double, 1>;
    auto rhs = [&](const State& s, State& ds, double) {
        const auto e = evaluate_drift(s[0], epsilon, a, b, theta, o);
        o.match.S_guess = e.S0;
        ds[0] = e.velocity;
    };
    std::vector<double> times(n_out);
    for (std::size_t k = 0; k < n_out; ++k)
        times[k] = t_end * static_cast<double>(k) / static_cast<double>(n_out - 1);

    namespace ode = boost::numeric::odeint;
    auto stepper = ode::make_dense_output(o.atol, o.rtol, ode::runge_kutta_dopri5<State>());
    State s{x0_init};
    try {
        ode::integrate_times(stepper, rhs, s, times.begin(), times.end(),
                             t_end / static_cast<double>(n_out - 1),
                             [&](const State& st, double t) {
                                 if (t == 0.0) {
                                     record(t, first);
                                     return;
                                 }
                                 const auto e = evaluate_drift(st[0], epsilon, a, b, theta, o);
                                 record(t, e);
                             });
    } catch (const Error& e) {
        tr.completed = false;
        tr.failure = e.what();
    }
    return tr;
}

inline DriftState drift_state_at(const DriftTrajectory& tr, std::size_t k, double epsilon,
                                 double a, double b, double theta, const DriftOptions& opt = {}) {
    DriftState st;
    st.x0 = tr.x0.at(k);
    st.T = std::pow(epsilon, 3) * tr.t.at(k);
    auto m = steady::offcenter_amplitude(st.x0, epsilon, a, b, theta, opt.match);
    st.S0 = m.S;
    st.profile = std::move(m.profile);
    return st;
}

struct EquilibriumResult {
    double x0 = 0.0;
    int sign_changes = 0;  // genuine roots of the tangent sum in the scanned interval
};

/// Centered equilibrium of the drift: root of tan(sqrt(ab)(x+1)) + tan(sqrt(ab)(x-1))
/// (the tangent combination that multiplies the velocity). The scan skips
/// cells where either tangent passes through a pole.
inline EquilibriumResult drift_equilibrium(double a, double b, double x_lo = -0.9,
                                           double x_hi = 0.9, std::size_t samples = 1801) {
    require_outer_valid(a, b);
    const double sab = std::sqrt(a * b);
    auto r = [&](double x) { return tangent_sum(x, a, b); };
    auto cosines = [&](double x) { return std::array{std::cos(sab * (x + 1.0)), std::cos(sab * (x - 1.0))}; };
    EquilibriumResult out;
    double best = std::numeric_limits<double>::infinity();
    double xp = x_lo, rp = r(xp);
    auto cp = cosines(xp);
    for (std::size_t k = 1; k < samples; ++k) {
        const double x = x_lo + (x_hi - x_lo) * static_cast<double>(k) / static_cast<double>(samples - 1);
        const double rx = r(x);
        const auto cx = cosines(x);
        const bool pole = cx[0] * cp[0] <= 0.0 || cx[1] * cp[1] <= 0.0;
        if (!pole && ((rp < 0.0 && rx >= 0.0) || (rp > 0.0 && rx <= 0.0))) {
            ++out.sign_changes;
            double lo = xp, hi = x, flo = rp;
            for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = r(mid);
                if ((fm < 0.0) == (flo < 0.0)) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            const double root = std::abs(rx) == 0.0 ? x : 0.5 * (lo + hi);
            if (std::abs(root) < std::abs(best)) best = root;
        }
        xp = x;
        rp = rx;
        cp = cx;
    }
    out.x0 = std::isfinite(best) ? best : 0.0;
    if (std::abs(out.x0) < 1e-14) out.x0 = 0.0;
    return out;
}

/// Least-squares slope of ln|x| against t over t >= t_from.
inline double log_decay_rate(std::span<const double> t, std::span<const double> x, double t_from) {
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < t_from || x[i] == 0.0) continue;
        const double y = std::log(std::abs(x[i]));
        st += t[i];
        sy += y;
        stt += t[i] * t[i];
        sty += t[i] * y;
        ++n;
    }
    if (n < 2) throw InsufficientExtremaError("fewer than two samples in the decay window");
    const double dn = static_cast<double>(n);
    return (dn * sty - st * sy) / (dn * stt - st * st);
}

inline void write_drift_csv(const DriftTrajectory& tr, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out.precision(12);
    out << "t,x0,S0,velocity\n";
    for (std::size_t i = 0; i < tr.t.size(); ++i)
        out << tr.t[i] << ',' << tr.x0[i] << ',' << tr.S0[i] << ',' << tr.velocity[i] << '\n';
}

/// Value of the PDE spike track at the observation nearest in time to t.
inline const pde::SpikeObservation& nearest_observation(
    const std::vector<pde::SpikeObservation>& track, double t) {
    if (track.empty()) throw Error("empty spike track");
    auto it = std::lower_bound(track.begin(), track.end(), t,
                               [](const pde::SpikeObservation& o, double v) { return o.t < v; });
    if (it == track.end()) return track.back();
    if (it != track.begin() && std::abs(std::prev(it)->t - t) < std::abs(it->t - t)) return *std::prev(it);
    return *it;
}

inline void write_drift_comparison_csv(const DriftTrajectory& tr,
                                       const std::vector<pde::SpikeObservation>& track,
                                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out.precision(12);
    out << "t,x0_dae,S0_dae,t_pde,x0_pde\n";
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
        const auto& o = nearest_observation(track, tr.t[i]);
        out << tr.t[i] << ',' << tr.x0[i] << ',' << tr.S0[i] << ',' << o.t << ',' << o.x0 << '\n';
    }
}

}  // namespace spikelab::slowdyn
