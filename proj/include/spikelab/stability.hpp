#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "spikelab/core.hpp"
#include "spikelab/errors.hpp"
#include "spikelab/innersolve.hpp"
#include "spikelab/numerics/banded.hpp"
#include "spikelab/numerics/quadrature.hpp"
#include "spikelab/pdesim.hpp"
#include "spikelab/steady.hpp"

namespace spikelab::stability {

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// Nonlocal eigenvalue problem of the spike core

struct NLEPOptions {
    bool keep_S2 = false;  // retain the O(S^2) outer-flux terms dropped at leading order
    double h = 0.0;        // resampling step; 0 keeps the inner-profile grid
};

/// Even-symmetric discretization of the core operator
/// L_N = d^2/dy^2 - 1 + theta K0^{theta-1} L0^{1-theta} + (1-theta) K0^theta L0^{1-theta}
/// on [0, Y] with reflecting ends, plus the data entering the secular function.
struct NLEPContext {
    inner::InnerProfile inner;
    double epsilon = 0.0, a = 0.0, b = 0.0, theta = 0.0, S = 0.0;
    NLEPOptions options;
    double h = 0.0;
    std::vector<double> y, K0, L0;
    std::vector<double> forcing;    // K0^theta L0^{1-theta}
    std::vector<double> potential;  // zeroth-order part of L_N
    std::vector<double> weight;     // whole-line quadrature weights (twice the half line)
    double core_flux = 0.0;         // int_R (a - 2 L0)(L0 - S)
    double tan_term = 0.0;          // sqrt(ab) tan(sqrt(ab))

    std::size_t size() const { return y.size(); }

    /// Sub-, main and super-diagonal of row i of L_N.
    std::array<double, 3> stencil_row(std::size_t i) const {
        const double c = 1.0 / (h * h);
        const std::size_t n = size();
        if (i == 0) return {0.0, -2.0 * c + potential[0], 2.0 * c};
        if (i + 1 == n) return {2.0 * c, -2.0 * c + potential[i], 0.0};
        return {c, -2.0 * c + potential[i], c};
    }

    template <typename T>
    std::vector<T> apply_local(const std::vector<T>& v) const {
        const std::size_t n = size();
        std::vector<T> out(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = stencil_row(i);
            T s = r[1] * v[i];
            if (i > 0) s += r[0] * v[i - 1];
            if (i + 1 < n) s += r[2] * v[i + 1];
            out[i] = s;
        }
        return out;
    }
};

inline NLEPContext make_nlep_context(inner::InnerProfile profile, double epsilon, double a,
                                     double b, const NLEPOptions& opt = {}) {
    require_outer_valid(a, b);
    NLEPContext c;
    c.epsilon = epsilon;
    c.a = a;
    c.b = b;
    c.theta = profile.theta;
    c.S = profile.S;
    c.options = opt;
    const double Y = profile.y.back();
    if (opt.h > 0.0 && std::abs(opt.h - profile.h) > 1e-12 * profile.h) {
        const auto n = static_cast<std::size_t>(std::ceil(Y / opt.h)) + 1;
        c.h = Y / static_cast<double>(n - 1);
        c.y.resize(n);
        c.K0.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            c.y[i] = c.h * static_cast<double>(i);
            c.K0[i] = profile.K_at(c.y[i]);
        }
    } else {
        c.h = profile.h;
        c.y = profile.y;
        c.K0 = profile.K0;
    }
    const std::size_t n = c.y.size();
    const inner::CoreNonlinearity nl(c.S, c.theta);
    c.L0.resize(n);
    c.forcing.resize(n);
    c.potential.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        c.L0[i] = c.S * std::exp(c.K0[i] - c.S);
        c.forcing[i] = nl.F(c.K0[i]);
        c.potential[i] = -1.0 + c.theta * c.forcing[i] / c.K0[i] + (1.0 - c.theta) * c.forcing[i];
    }
    c.weight = numerics::trapezoid_weights(n, c.h);
    for (double& w : c.weight) w *= 2.0;
    for (std::size_t i = 0; i < n; ++i)
        c.core_flux += c.weight[i] * (a - 2.0 * c.L0[i]) * (c.L0[i] - c.S);
    const double sab = std::sqrt(a * b);
    c.tan_term = sab * std::tan(sab);
    c.inner = std::move(profile);
    return c;
}

inline NLEPContext make_nlep_context(double epsilon, double a, double b, double theta,
                                     const NLEPOptions& opt = {},
                                     const steady::MatchOptions& mopt = {}) {
    auto m = steady::match_amplitude(epsilon, a, b, theta, mopt);
    return make_nlep_context(std::move(m.profile), epsilon, a, b, opt);
}

namespace detail {

/// Solves (L_N - lambda) x = rhs in place (LAPACK gtsv, partial pivoting).
inline void resolvent_solve(const NLEPContext& c, cplx lambda, std::vector<cplx>& rhs) {
    const std::size_t n = c.size();
    std::vector<cplx> dl(n - 1), d(n), du(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = c.stencil_row(i);
        d[i] = r[1] - lambda;
        if (i > 0) dl[i - 1] = r[0];
        if (i + 1 < n) du[i] = r[2];
    }
    const lapack_int info = LAPACKE_zgtsv(
        LAPACK_COL_MAJOR, static_cast<lapack_int>(n), 1,
        reinterpret_cast<lapack_complex_double*>(dl.data()),
        reinterpret_cast<lapack_complex_double*>(d.data()),
        reinterpret_cast<lapack_complex_double*>(du.data()),
        reinterpret_cast<lapack_complex_double*>(rhs.data()), static_cast<lapack_int>(n));
    if (info != 0) {
        std::ostringstream os;
        os << "lambda=" << lambda << " lies on the spectrum of the core operator";
        throw ResolventSingularError(os.str());
    }
}

inline cplx outer_mu(double a, double b, double tau, cplx lambda) {
    return std::sqrt(cplx(a * b) - tau * lambda);
}

}  // namespace detail

/// Everything computed along the way to f(lambda).
struct SecularTerms {
    cplx f;
    cplx df;             // d f / d lambda (only when requested)
    cplx D;              // coefficient of g0 (outer flux plus core flux)
    cplx mu;
    cplx R_far;          // S_Psi per unit forcing: resolvent output at y = Y
    double consistency_error = 0.0;  // relative gap to the far-field relation
    std::vector<cplx> R;             // (L_N - lambda)^{-1} (K0^theta L0^{1-theta})
};

inline SecularTerms evaluate_secular(const NLEPContext& c, cplx lambda, double tau,
                                     bool derivative = false) {
    const std::size_t n = c.size();
    SecularTerms t;
    t.mu = detail::outer_mu(c.a, c.b, tau, lambda);
    const cplx cosmu = std::cos(t.mu);
    if (std::abs(cosmu) < 1e-8) {
        std::ostringstream os;
        os << "cos(mu) = " << std::abs(cosmu) << " near a pole of the outer response at lambda="
           << lambda;
        warn(os.str());
    }
    const cplx tanmu = std::tan(t.mu);
    const double eb = c.epsilon * c.b;
    const double s2 = c.options.keep_S2 ? 2.0 * c.S * c.S * c.tan_term : 0.0;

    t.R.assign(c.forcing.begin(), c.forcing.end());
    detail::resolvent_solve(c, lambda, t.R);
    t.R_far = t.R.back();

    // int (a - 2L0)(L0 R - S R_far)
    auto pairing = [&](const std::vector<cplx>& v) {
        cplx s = 0.0;
        const cplx far = v.back();
        for (std::size_t i = 0; i < n; ++i)
            s += c.weight[i] * (c.a - 2.0 * c.L0[i]) * (c.L0[i] * v[i] - c.S * far);
        return s;
    };
    t.D = 2.0 * c.S * t.mu * tanmu + eb * c.core_flux - s2;
    t.f = (1.0 - c.theta) * (eb * pairing(t.R) - s2 * t.R_far) - t.D;

    // Far-field check: (-1 + theta + (1-theta) S - lambda) R_far = S.
    const cplx R_inf = -c.S / ((1.0 - c.theta) * (1.0 - c.S) + lambda);
    t.consistency_error = std::abs(t.R_far - R_inf) / std::abs(R_inf);

    if (derivative) {
        std::vector<cplx> dR = t.R;
        detail::resolvent_solve(c, lambda, dR);
        const cplx tan_over_mu = std::abs(t.mu) < 1e-8 ? cplx(1.0) : tanmu / t.mu;
        const cplx dD = -c.S * tau * (tan_over_mu + 1.0 / (cosmu * cosmu));
        t.df = (1.0 - c.theta) * (eb * pairing(dR) - s2 * dR.back()) - dD;
    }
    return t;
}

/// Secular function whose zeros are the even-mode NLEP eigenvalues.
inline cplx nlep_secular(cplx lambda, const NLEPContext& ctx, double tau) {
    return evaluate_secular(ctx, lambda, tau).f;
}

/// Linear functional g0(v) of the rank-one nonlocal term, with D frozen at `D`.
inline cplx nlep_functional(const NLEPContext& c, const std::vector<cplx>& v, cplx D) {
    const double eb = c.epsilon * c.b;
    const double s2 = c.options.keep_S2 ? 2.0 * c.S * c.S * c.tan_term : 0.0;
    cplx s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
        s += c.weight[i] * (c.a - 2.0 * c.L0[i]) * (c.L0[i] * v[i] - c.S * v.back());
    return (s2 * v.back() - eb * s) / D;
}

/// ||(Op - lambda) v|| / ||v|| for the nonlocal operator Op v = L_N v + (1-theta) F g0(v).
inline double nlep_residual(const NLEPContext& c, cplx lambda, const std::vector<cplx>& v,
                            cplx D) {
    const auto Lv = c.apply_local(v);
    const cplx g = nlep_functional(c, v, D);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        num += std::norm(Lv[i] + (1.0 - c.theta) * c.forcing[i] * g - lambda * v[i]);
        den += std::norm(v[i]);
    }
    return std::sqrt(num / den);
}

enum class SpectrumMethod { nlep_secular, discretized_full, canonical };

inline std::string to_string(SpectrumMethod m) {
    switch (m) {
        case SpectrumMethod::nlep_secular: return "nlep_secular";
        case SpectrumMethod::discretized_full: return "discretized_full";
        case SpectrumMethod::canonical: return "canonical";
    }
    return "?";
}

struct SpectrumResult {
    std::vector<cplx> eigenvalues;  // sorted by real part, descending
    std::vector<double> residuals;
    SpectrumMethod method = SpectrumMethod::nlep_secular;
};

struct RootSearchOptions {
    double re_min = -2.0, re_max = 2.0;
    double im_min = 0.0, im_max = 10.0;
    int n_re = 41, n_im = 51;
    int max_seeds = 16;
    int newton_max = 60;
    double newton_tol = 1e-12;  // |step| relative to max(1, |lambda|)
    bool dense_check = false;
    double dense_tol = 1e-6;
};

struct NLEPEigenvalue {
    cplx lambda;
    double residual = 0.0;
    double consistency_error = 0.0;
    SpectrumResult roots;        // every distinct root found in the box
    double grid_min_abs_f = 0.0;
    std::optional<cplx> dense_lambda;
};

namespace detail {

inline std::optional<cplx> newton_secular(const NLEPContext& c, double tau, cplx z,
                                          const RootSearchOptions& o) {
    double prev_step = std::numeric_limits<double>::infinity();
    for (int it = 0; it < o.newton_max; ++it) {
        SecularTerms t;
        try {
            t = evaluate_secular(c, z, tau, true);
        } catch (const ResolventSingularError&) {
            return std::nullopt;
        }
        if (!std::isfinite(std::abs(t.df)) || std::abs(t.df) == 0.0) return std::nullopt;
        cplx step = t.f / t.df;
        const double cap = 0.5 * std::max(1.0, std::abs(z));
        if (std::abs(step) > cap) step *= cap / std::abs(step);
        z -= step;
        if (z.imag() < 0.0) z = std::conj(z);
        if (std::abs(z.real()) > 1e3 || std::abs(z.imag()) > 1e3) return std::nullopt;
        const double scale = std::max(1.0, std::abs(z));
        if (std::abs(step) <= o.newton_tol * scale) return z;
        // Roundoff floor of f reached: the step no longer contracts.
        if (std::abs(step) <= 1e-8 * scale && std::abs(step) > 0.5 * prev_step) return z;
        prev_step = std::abs(step);
    }
    return std::nullopt;
}

}  // namespace detail

/// Rightmost eigenvalue of the dense nonlocal operator with D frozen at `lambda_ref`.
inline cplx dense_nlep_eigenvalue(const NLEPContext& c, double tau, cplx lambda_ref) {
    const std::size_t n = c.size();
    const SecularTerms t = evaluate_secular(c, lambda_ref, tau);
    const double eb = c.epsilon * c.b;
    const double s2 = c.options.keep_S2 ? 2.0 * c.S * c.S * c.tan_term : 0.0;
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n),
                                               static_cast<Eigen::Index>(n));
    Eigen::VectorXcd g = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(n));
    double far_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        g(static_cast<Eigen::Index>(j)) =
            -eb * c.weight[j] * (c.a - 2.0 * c.L0[j]) * c.L0[j];
        far_sum += c.weight[j] * (c.a - 2.0 * c.L0[j]);
    }
    g(static_cast<Eigen::Index>(n - 1)) += eb * c.S * far_sum + s2;
    g /= t.D;
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = c.stencil_row(i);
        const auto ii = static_cast<Eigen::Index>(i);
        A(ii, ii) += r[1];
        if (i > 0) A(ii, ii - 1) += r[0];
        if (i + 1 < n) A(ii, ii + 1) += r[2];
        A.row(ii) += (1.0 - c.theta) * c.forcing[i] * g.transpose();
    }
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(A, false);
    if (es.info() != Eigen::Success) throw NoConvergenceError("dense NLEP eigensolve failed");
    cplx best = es.eigenvalues()(0);
    for (Eigen::Index k = 1; k < es.eigenvalues().size(); ++k)
        if (std::abs(es.eigenvalues()(k) - lambda_ref) < std::abs(best - lambda_ref))
            best = es.eigenvalues()(k);
    return best;
}

/// Rightmost root of f in the search box (upper half plane; roots come in
/// conjugate pairs), by complex Newton from the local minima of |f| on a grid.
inline NLEPEigenvalue leading_nlep_eigenvalue(const NLEPContext& c, double tau,
                                              const RootSearchOptions& o = {}) {
    const int nr = o.n_re, ni = o.n_im;
    std::vector<double> mag(static_cast<std::size_t>(nr * ni),
                            std::numeric_limits<double>::infinity());
    auto at = [&](int i, int j) { return cplx(o.re_min + (o.re_max - o.re_min) * i / (nr - 1),
                                              o.im_min + (o.im_max - o.im_min) * j / (ni - 1)); };
    auto idx = [&](int i, int j) { return static_cast<std::size_t>(i * ni + j); };
    {
        ScopedWarningCapture quiet;  // pole warnings on grid points are expected
        for (int i = 0; i < nr; ++i)
            for (int j = 0; j < ni; ++j) {
                try {
                    const double v = std::abs(evaluate_secular(c, at(i, j), tau).f);
                    if (std::isfinite(v)) mag[idx(i, j)] = v;
                } catch (const ResolventSingularError&) {
                }
            }
    }
    struct Seed {
        double v;
        cplx z;
    };
    std::vector<Seed> seeds;
    double grid_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < ni; ++j) {
            const double v = mag[idx(i, j)];
            grid_min = std::min(grid_min, v);
            bool local_min = std::isfinite(v);
            for (int di = -1; di <= 1 && local_min; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                    const int a = i + di, b = j + dj;
                    if ((di == 0 && dj == 0) || a < 0 || a >= nr || b < 0 || b >= ni) continue;
                    if (mag[idx(a, b)] < v) {
                        local_min = false;
                        break;
                    }
                }
            if (local_min) seeds.push_back({v, at(i, j)});
        }
    std::sort(seeds.begin(), seeds.end(), [](const Seed& p, const Seed& q) { return p.v < q.v; });
    if (static_cast<int>(seeds.size()) > o.max_seeds) seeds.resize(static_cast<std::size_t>(o.max_seeds));

    NLEPEigenvalue out;
    out.grid_min_abs_f = grid_min;
    out.roots.method = SpectrumMethod::nlep_secular;
    std::vector<cplx> roots;
    {
        ScopedWarningCapture quiet;
        for (const auto& s : seeds) {
            const auto z = detail::newton_secular(c, tau, s.z, o);
            if (!z) continue;
            if (z->real() < o.re_min - 1.0 || z->real() > o.re_max + 1.0 ||
                z->imag() > o.im_max + 1.0)
                continue;
            const bool dup = std::any_of(roots.begin(), roots.end(), [&](cplx r) {
                return std::abs(r - *z) < 1e-7 * std::max(1.0, std::abs(r));
            });
            if (!dup) roots.push_back(*z);
        }
    }
    if (roots.empty()) {
        std::ostringstream os;
        os << "no root of the secular function found in the search box (min |f| on grid = "
           << grid_min << ")";
        throw NoConvergenceError(os.str());
    }
    std::sort(roots.begin(), roots.end(), [](cplx p, cplx q) { return p.real() > q.real(); });
    for (cplx r : roots) {
        const SecularTerms t = evaluate_secular(c, r, tau);
        out.roots.eigenvalues.push_back(r);
        out.roots.residuals.push_back(nlep_residual(c, r, t.R, t.D));
    }
    out.lambda = roots.front();
    out.residual = out.roots.residuals.front();
    out.consistency_error = evaluate_secular(c, out.lambda, tau).consistency_error;
    if (o.dense_check) {
        out.dense_lambda = dense_nlep_eigenvalue(c, tau, out.lambda);
        if (std::abs(*out.dense_lambda - out.lambda) > o.dense_tol * std::max(1.0, std::abs(out.lambda))) {
            std::ostringstream os;
            os << "dense NLEP eigenvalue " << *out.dense_lambda << " disagrees with secular root "
               << out.lambda;
            warn(os.str());
        }
    }
    return out;
}

/// Samples f along a path of lambda values (for plotting).
inline void write_secular_trace_csv(const NLEPContext& c, double tau,
                                    const std::vector<cplx>& lambdas, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out.precision(17);
    out << "re_lambda,im_lambda,re_f,im_f\n";
    for (cplx l : lambdas) {
        const cplx f = nlep_secular(l, c, tau);
        out << l.real() << ',' << l.imag() << ',' << f.real() << ',' << f.imag() << '\n';
    }
}

/// Real roots of f on [lo, hi] at fixed tau. Sign changes are refined by
/// bisection and kept only when |f| shrinks (a pole of the resolvent also
/// flips the sign of f, with |f| growing instead).
inline std::vector<double> real_secular_roots(const NLEPContext& c, double tau, double lo,
                                              double hi, std::size_t samples = 401) {
    auto f = [&](double l) { return nlep_secular(cplx(l, 0.0), c, tau).real(); };
    std::vector<double> roots;
    double xp = lo, fp = f(lo);
    for (std::size_t k = 1; k < samples; ++k) {
        const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(samples - 1);
        const double fx = f(x);
        if (fp == 0.0) roots.push_back(xp);
        if ((fp < 0.0 && fx > 0.0) || (fp > 0.0 && fx < 0.0)) {
            double a = xp, b = x, fa = fp;
            for (int it = 0; it < 100 && b - a > 1e-13 * std::max(1.0, std::abs(a)); ++it) {
                const double m = 0.5 * (a + b);
                const double fm = f(m);
                if ((fm < 0.0) == (fa < 0.0)) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            const double fm = std::abs(f(0.5 * (a + b)));
            if (fm <= std::min(std::abs(fp), std::abs(fx))) roots.push_back(0.5 * (a + b));
        }
        xp = x;
        fp = fx;
    }
    return roots;
}

// ---------------------------------------------------------------------------
// Linearization of the full discrete system

/// Pencil A v = lambda B v of the discretized system about `state`:
/// A is the exact Jacobian of the scaled right sides, B = diag(tau on l, 1 on k).
struct Pencil {
    ModelParams params;
    Grid grid;
    FieldPair state;
    numerics::BandedMatrix<double> A;
    std::vector<double> B;

    std::size_t size() const { return B.size(); }
};

inline Pencil assemble_linearization(const FieldPair& state, const ModelParams& p, const Grid& g) {
    Pencil pen;
    pen.params = p;
    pen.grid = g;
    pen.state = state;
    pen.A = pde::scaled_jacobian(state, p, g);
    pen.B.assign(2 * g.n, 1.0);
    for (std::size_t i = 0; i < g.n; ++i) pen.B[pde::l_index(i)] = p.tau;
    return pen;
}

inline Pencil assemble_linearization(const steady::SteadyState& ss, const ModelParams& p,
                                     const Grid& g) {
    return assemble_linearization(ss.fields(), p, g);
}

/// Discrete steady state on `g`: composite spike relaxed by Newton.
inline FieldPair discrete_steady_state(const ModelParams& p, const Grid& g, double x0 = 0.0,
                                       const steady::MatchOptions& mopt = {}) {
    const auto ss = steady::build_steady_state(p, g, x0, mopt);
    auto r = pde::relax_to_steady(p, g, ss.fields());
    return std::move(r.u);
}

struct PencilEigenOptions {
    int nev = 4;          // eigenvalues wanted nearest each shift
    int krylov = 30;
    int restarts = 8;
    double tol = 1e-10;   // backward error ||(A - lambda B) v|| / ((||A|| + |lambda| ||B||) ||v||)
    std::size_t dense_max_n = 250;  // grid size up to which a dense QZ solve is used
};

namespace detail {

inline double pencil_backward_error(const Pencil& pen, cplx lambda, const std::vector<cplx>& v,
                                    double normA) {
    const std::size_t m = pen.size();
    std::vector<double> re(m), im(m), Are(m), Aim(m);
    for (std::size_t i = 0; i < m; ++i) {
        re[i] = v[i].real();
        im[i] = v[i].imag();
    }
    pen.A.multiply(re, Are);
    pen.A.multiply(im, Aim);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        num += std::norm(cplx(Are[i], Aim[i]) - lambda * pen.B[i] * v[i]);
        den += std::norm(v[i]);
    }
    const double normB = *std::max_element(pen.B.begin(), pen.B.end());
    return std::sqrt(num / den) / (normA + std::abs(lambda) * normB);
}

}  // namespace detail

/// Eigenvalues of the pencil nearest `shift` by shift-and-invert Arnoldi on
/// (A - shift B)^{-1} B with explicit restarts. With tau = 0 the l block is
/// algebraic; the shifted solve then acts as the Schur-complement resolvent
/// in k alone and the infinite eigenvalues map to zero Ritz values.
inline SpectrumResult pencil_eigenvalues_near(const Pencil& pen, cplx shift,
                                              const PencilEigenOptions& o = {}) {
    const std::size_t m = pen.size();
    const double normA = pen.A.norm_inf();
    SpectrumResult res;
    res.method = SpectrumMethod::discretized_full;

    if (pen.grid.n <= o.dense_max_n) {
        const auto mi = static_cast<Eigen::Index>(m);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(mi, mi), B = Eigen::MatrixXd::Zero(mi, mi);
        for (std::size_t i = 0; i < m; ++i) {
            B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = pen.B[i];
            for (std::size_t j = 0; j < m; ++j)
                A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pen.A.at(i, j);
        }
        Eigen::GeneralizedEigenSolver<Eigen::MatrixXd> ges(A, B, true);
        std::vector<std::pair<cplx, std::vector<cplx>>> all;
        for (Eigen::Index k = 0; k < mi; ++k) {
            if (std::abs(ges.betas()(k)) < 1e-14 * std::abs(ges.alphas()(k))) continue;
            const cplx lam = ges.alphas()(k) / ges.betas()(k);
            std::vector<cplx> v(m);
            for (std::size_t i = 0; i < m; ++i) v[i] = ges.eigenvectors()(static_cast<Eigen::Index>(i), k);
            all.emplace_back(lam, std::move(v));
        }
        std::sort(all.begin(), all.end(), [&](const auto& p, const auto& q) {
            return std::abs(p.first - shift) < std::abs(q.first - shift);
        });
        for (std::size_t k = 0; k < std::min<std::size_t>(all.size(), static_cast<std::size_t>(o.nev)); ++k) {
            res.eigenvalues.push_back(all[k].first);
            res.residuals.push_back(detail::pencil_backward_error(pen, all[k].first, all[k].second, normA));
        }
    } else {
        numerics::BandedMatrix<cplx> S(m, pen.A.lower_bandwidth(), pen.A.upper_bandwidth());
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j0 = i > 2 ? i - 2 : 0, j1 = std::min(m - 1, i + 3);
            for (std::size_t j = j0; j <= j1; ++j) S.at(i, j) = pen.A.at(i, j);
            S.at(i, i) -= shift * pen.B[i];
        }
        const numerics::BandedLU<cplx> lu(std::move(S));
        const int kdim = std::min<int>(o.krylov, static_cast<int>(m) - 1);
        std::vector<cplx> start(m);
        for (std::size_t i = 0; i < m; ++i)  // deterministic, broadband start vector
            start[i] = cplx(1.0 + 0.5 * std::sin(0.37 * static_cast<double>(i)),
                            0.3 * std::cos(0.11 * static_cast<double>(i)));
        std::vector<std::pair<cplx, std::vector<cplx>>> best;
        for (int restart = 0; restart <= o.restarts; ++restart) {
            std::vector<std::vector<cplx>> Vb;
            Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(kdim + 1, kdim);
            double nrm = 0.0;
            for (const cplx& s : start) nrm += std::norm(s);
            nrm = std::sqrt(nrm);
            Vb.emplace_back(m);
            for (std::size_t i = 0; i < m; ++i) Vb[0][i] = start[i] / nrm;
            int k_used = kdim;
            for (int j = 0; j < kdim; ++j) {
                std::vector<cplx> w(m);
                for (std::size_t i = 0; i < m; ++i) w[i] = pen.B[i] * Vb[static_cast<std::size_t>(j)][i];
                lu.solve_in_place(w);
                for (int pass = 0; pass < 2; ++pass)
                    for (int q = 0; q <= j; ++q) {
                        cplx h = 0.0;
                        const auto& vq = Vb[static_cast<std::size_t>(q)];
                        for (std::size_t i = 0; i < m; ++i) h += std::conj(vq[i]) * w[i];
                        H(q, j) += h;
                        for (std::size_t i = 0; i < m; ++i) w[i] -= h * vq[i];
                    }
                double wn = 0.0;
                for (const cplx& x : w) wn += std::norm(x);
                wn = std::sqrt(wn);
                H(j + 1, j) = wn;
                if (wn < 1e-14 * std::abs(H(j, j))) {
                    k_used = j + 1;
                    break;
                }
                Vb.emplace_back(m);
                for (std::size_t i = 0; i < m; ++i) Vb.back()[i] = w[i] / wn;
            }
            Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(H.topLeftCorner(k_used, k_used), true);
            std::vector<int> order(static_cast<std::size_t>(k_used));
            for (int q = 0; q < k_used; ++q) order[static_cast<std::size_t>(q)] = q;
            std::sort(order.begin(), order.end(), [&](int p, int q) {
                return std::abs(es.eigenvalues()(p)) > std::abs(es.eigenvalues()(q));
            });
            best.clear();
            bool all_ok = true;
            std::fill(start.begin(), start.end(), cplx(0.0));
            for (int q = 0; q < std::min(o.nev, k_used); ++q) {
                const int e = order[static_cast<std::size_t>(q)];
                const cplx nu = es.eigenvalues()(e);
                if (std::abs(nu) == 0.0) continue;
                const cplx lam = shift + 1.0 / nu;
                std::vector<cplx> x(m, cplx(0.0));
                for (int r = 0; r < k_used; ++r) {
                    const cplx s = es.eigenvectors()(r, e);
                    const auto& vr = Vb[static_cast<std::size_t>(r)];
                    for (std::size_t i = 0; i < m; ++i) x[i] += s * vr[i];
                }
                const double be = detail::pencil_backward_error(pen, lam, x, normA);
                if (be > o.tol) all_ok = false;
                for (std::size_t i = 0; i < m; ++i) start[i] += x[i];
                best.emplace_back(lam, std::move(x));
            }
            if (all_ok || restart == o.restarts) {
                for (auto& [lam, x] : best) {
                    res.eigenvalues.push_back(lam);
                    res.residuals.push_back(detail::pencil_backward_error(pen, lam, x, normA));
                }
                break;
            }
        }
    }
    std::vector<std::size_t> perm(res.eigenvalues.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::sort(perm.begin(), perm.end(), [&](std::size_t p, std::size_t q) {
        return res.eigenvalues[p].real() > res.eigenvalues[q].real();
    });
    SpectrumResult sorted;
    sorted.method = res.method;
    for (std::size_t i : perm) {
        sorted.eigenvalues.push_back(res.eigenvalues[i]);
        sorted.residuals.push_back(res.residuals[i]);
    }
    return sorted;
}

/// Eigenvalue of the pencil closest to `guess` among those passing the residual test.
inline std::optional<cplx> pencil_eigenvalue_nearest(const Pencil& pen, cplx guess,
                                                     const PencilEigenOptions& o = {}) {
    const auto sp = pencil_eigenvalues_near(pen, guess, o);
    std::optional<cplx> best;
    for (std::size_t i = 0; i < sp.eigenvalues.size(); ++i) {
        if (sp.residuals[i] > o.tol) continue;
        if (!best || std::abs(sp.eigenvalues[i] - guess) < std::abs(*best - guess))
            best = sp.eigenvalues[i];
    }
    return best;
}

// ---------------------------------------------------------------------------
// Adjoint null vector and the small (translational) eigenvalue

struct AdjointProfile {
    std::vector<double> y;
    std::vector<double> P;
    std::vector<double> Q;  // K0y
    double P_inf = 0.0;
};

/// P(y) = (1-theta)/2 int_0^y (K0y^2 - (K0^2 - S^2)) / L0, extended past Y
/// with the exponential far-field tail of the integrand.
inline AdjointProfile compute_adjoint_P(const inner::InnerProfile& p) {
    const std::size_t n = p.size();
    AdjointProfile out;
    out.y = p.y;
    out.Q = p.K0y;
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = p.K0[i] - p.S;
        g[i] = (p.K0y[i] * p.K0y[i] - u * (2.0 * p.S + u)) / p.L0[i];
    }
    const double c = 0.5 * (1.0 - p.theta);
    out.P = numerics::cumulative_uniform(g, p.h);
    for (double& v : out.P) v *= c;
    out.P.front() = 0.0;
    out.P_inf = out.P.back() + c * g.back() / p.decay_rate;
    return out;
}

/// eps^2 * 2 S ab P_inf / (int_R K0y^2 * cos^2 sqrt(ab)) for a given core profile.
inline double small_eigenvalue_from(const inner::InnerProfile& p, double epsilon, double a,
                                    double b) {
    const double sab = std::sqrt(a * b);
    const double P_inf = compute_adjoint_P(p).P_inf;
    const double E = inner::gradient_energy(p);
    const double c = std::cos(sab);
    return epsilon * epsilon * 2.0 * p.S * a * b * P_inf / (E * c * c);
}

inline double small_eigenvalue(double epsilon, double a, double b, double theta,
                               const steady::MatchOptions& mopt = {}) {
    const auto m = steady::match_amplitude(epsilon, a, b, theta, mopt);
    return small_eigenvalue_from(m.profile, epsilon, a, b);
}

// ---------------------------------------------------------------------------
// Canonical NLEP and the multiplier alpha

struct CanonicalOptions {
    double L = 30.0;  // half-length of the truncated interval
    double h = 0.05;
};

/// Spectrum of Psi'' + (rho/3) Psi - (alpha/3) (int rho^{2r} Psi / int rho^{2r}) rho = Lambda Psi,
/// rho = (3/2) sech^2(z/2), restricted to even functions (fourth-order stencil,
/// reflection at 0, Psi = 0 at z = L).
inline SpectrumResult canonical_nlep_spectrum(double alpha, double r,
                                              const CanonicalOptions& o = {}) {
    if (!(r >= 1.0)) throw ParameterDomainError("canonical NLEP requires r >= 1");
    const auto n = static_cast<std::size_t>(std::llround(o.L / o.h));
    const double h = o.L / static_cast<double>(n);
    const auto ni = static_cast<Eigen::Index>(n);
    std::vector<double> rho(n), wr(n);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = h * static_cast<double>(i);
        const double sech = 1.0 / std::cosh(0.5 * z);
        rho[i] = 1.5 * sech * sech;
        wr[i] = (i == 0 ? 1.0 : 2.0) * h * std::pow(rho[i], 2.0 * r);
        norm += wr[i];
    }
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(ni, ni);
    const double c = 1.0 / (12.0 * h * h);
    const double st[5] = {-1.0, 16.0, -30.0, 16.0, -1.0};
    for (std::size_t i = 0; i < n; ++i) {
        for (int d = -2; d <= 2; ++d) {
            long j = static_cast<long>(i) + d;
            double sgn = 1.0;
            if (j < 0) j = -j;                          // even reflection at 0
            if (j >= static_cast<long>(n)) {            // odd reflection about z = L
                j = 2 * static_cast<long>(n) - j;
                sgn = -1.0;
                if (j >= static_cast<long>(n)) continue;  // the node z = L itself is zero
            }
            M(static_cast<Eigen::Index>(i), j) += sgn * c * st[d + 2];
        }
        M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += rho[i] / 3.0;
        for (std::size_t j = 0; j < n; ++j)
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -=
                alpha / 3.0 * rho[i] * wr[j] / norm;
    }
    Eigen::EigenSolver<Eigen::MatrixXd> es(M, true);
    if (es.info() != Eigen::Success) throw NoConvergenceError("canonical NLEP eigensolve failed");
    SpectrumResult res;
    res.method = SpectrumMethod::canonical;
    std::vector<std::pair<cplx, double>> all;
    for (Eigen::Index k = 0; k < ni; ++k) {
        const cplx lam = es.eigenvalues()(k);
        const Eigen::VectorXcd v = es.eigenvectors().col(k);
        const double resid = (M.cast<cplx>() * v - lam * v).norm() / v.norm();
        all.emplace_back(lam, resid);
    }
    std::sort(all.begin(), all.end(),
              [](const auto& p, const auto& q) { return p.first.real() > q.first.real(); });
    for (auto& [l, rr] : all) {
        res.eigenvalues.push_back(l);
        res.residuals.push_back(rr);
    }
    return res;
}

inline cplx canonical_nlep_leading(double alpha, double r, const CanonicalOptions& o = {}) {
    return canonical_nlep_spectrum(alpha, r, o).eigenvalues.front();
}

/// alpha = 2 t / (2 t - mu tan mu), t = sqrt(ab) tan sqrt(ab), mu = sqrt(ab - tau lambda).
inline cplx alpha_at(double tau, double a, double b, cplx lambda) {
    require_outer_valid(a, b);
    const cplx mu0 = std::sqrt(cplx(a * b));
    const cplx t = mu0 * std::tan(mu0);
    const cplx mu = detail::outer_mu(a, b, tau, lambda);
    if (std::abs(std::cos(mu)) < 1e-8) warn("alpha: mu is close to a pole of tan");
    const cplx den = 2.0 * t - mu * std::tan(mu);
    if (std::abs(den) < 1e-10 * std::abs(t)) warn("alpha: denominator is close to zero");
    return 2.0 * t / den;
}

// ---------------------------------------------------------------------------
// Hopf threshold in tau

enum class HopfMethod { nlep, discretized, pde_bisect };

inline std::string to_string(HopfMethod m) {
    switch (m) {
        case HopfMethod::nlep: return "nlep";
        case HopfMethod::discretized: return "discretized";
        case HopfMethod::pde_bisect: return "pde_bisect";
    }
    return "?";
}

inline HopfMethod hopf_method_from_string(const std::string& s) {
    if (s == "nlep") return HopfMethod::nlep;
    if (s == "discretized") return HopfMethod::discretized;
    if (s == "pde_bisect") return HopfMethod::pde_bisect;
    throw ParameterDomainError("unknown Hopf method '" + s + "'");
}

struct HopfOptions {
    double tau_lo = 0.5;
    double tau_hi = 3.0;
    double tol = 1e-3;
    std::size_t n = 8000;           // grid for the discretized and PDE methods
    NLEPOptions nlep;
    RootSearchOptions roots;
    PencilEigenOptions pencil;
    steady::MatchOptions match;
    // pde_bisect
    double perturbation = 1e-3;     // relative bump of l inside the core
    double dt = 0.01;
    double t_transient = 60.0;      // discarded start of each run
    double t_window = 120.0;        // fitted part of each run
};

struct HopfSample {
    double tau = 0.0;
    double growth = 0.0;  // Re lambda (or fitted log-amplitude slope for the PDE)
    cplx lambda;          // leading eigenvalue (omega estimate for the PDE)
};

struct HopfResult {
    HopfMethod method = HopfMethod::nlep;
    double tau_h = 0.0;
    double tau_stable = 0.0;    // largest tau seen with decaying oscillation
    double tau_unstable = 0.0;  // smallest tau seen with growing oscillation
    std::vector<HopfSample> samples;
};

namespace detail {

/// Bisection on the sign of growth(tau) with the sign change inside [lo, hi].
template <typename Growth>
HopfResult bisect_hopf(Growth&& growth, const HopfOptions& o, HopfMethod method) {
    HopfResult res;
    res.method = method;
    double lo = o.tau_lo, hi = o.tau_hi;
    const HopfSample s_lo = growth(lo);
    const HopfSample s_hi = growth(hi);
    res.samples = {s_lo, s_hi};
    if (!(s_lo.growth < 0.0 && s_hi.growth > 0.0)) {
        std::ostringstream os;
        os << "no Hopf crossing in tau bracket [" << lo << ", " << hi
           << "] (growth " << s_lo.growth << ", " << s_hi.growth << ")";
        throw BracketError(os.str());
    }
    while (hi - lo > o.tol) {
        const double mid = 0.5 * (lo + hi);
        const HopfSample s = growth(mid);
        res.samples.push_back(s);
        (s.growth < 0.0 ? lo : hi) = mid;
    }
    res.tau_stable = lo;
    res.tau_unstable = hi;
    res.tau_h = 0.5 * (lo + hi);
    return res;
}

}  // namespace detail

/// Leading even-mode eigenvalue of the discrete pencil at `tau`, tracked from `guess`.
inline std::optional<cplx> discrete_hopf_eigenvalue(const FieldPair& steady_state,
                                                    ModelParams p, const Grid& g, double tau,
                                                    cplx guess,
                                                    const PencilEigenOptions& o = {}) {
    p.tau = tau;
    const Pencil pen = assemble_linearization(steady_state, p, g);
    return pencil_eigenvalue_nearest(pen, guess, o);
}

/// Fitted log-amplitude slope of the spike-height oscillation after a small
/// even perturbation of the discrete steady state.
inline pde::OscillationResult pde_oscillation(const FieldPair& steady_state, ModelParams p,
                                              const Grid& g, double tau, const HopfOptions& o) {
    p.tau = tau;
    FieldPair u = steady_state;
    for (std::size_t i = 0; i < g.n; ++i) {
        const double z = g.x[i] / (4.0 * p.epsilon);
        u.l[i] *= 1.0 + o.perturbation * std::exp(-z * z);
    }
    pde::Stepper st(p, g, std::move(u), o.dt);
    const std::size_t ic = g.n / 2;
    std::vector<double> t, h;
    const double t_end = o.t_transient + o.t_window;
    while (st.time() < t_end - 1e-12) {
        st.advance(t_end - st.time());
        if (st.time() >= o.t_transient) {
            t.push_back(st.time());
            h.push_back(0.5 * (st.state().k[ic - 1] + st.state().k[ic]));
        }
    }
    return pde::measure_oscillation(t, h);
}

inline HopfResult find_hopf_tau(double epsilon, double a, double b, double theta,
                                HopfMethod method, const HopfOptions& o = {}) {
    const NLEPContext ctx = make_nlep_context(epsilon, a, b, theta, o.nlep, o.match);
    auto nlep_growth = [&](double tau) {
        const auto ev = leading_nlep_eigenvalue(ctx, tau, o.roots);
        return HopfSample{tau, ev.lambda.real(), ev.lambda};
    };
    if (method == HopfMethod::nlep) return detail::bisect_hopf(nlep_growth, o, method);

    const ModelParams p = make_model_params(a, b, theta, epsilon, 1.0);
    const Grid g = make_grid(o.n, epsilon);
    const FieldPair us = discrete_steady_state(p, g, 0.0, o.match);

    if (method == HopfMethod::discretized) {
        auto growth = [&](double tau) {
            const cplx guess = leading_nlep_eigenvalue(ctx, tau, o.roots).lambda;
            const auto ev = discrete_hopf_eigenvalue(us, p, g, tau, guess, o.pencil);
            if (!ev) {
                std::ostringstream os;
                os << "pencil eigenvalue near " << guess << " did not converge at tau=" << tau;
                throw NoConvergenceError(os.str());
            }
            return HopfSample{tau, ev->real(), *ev};
        };
        return detail::bisect_hopf(growth, o, method);
    }

    auto growth = [&](double tau) {
        pde::OscillationResult osc;
        try {
            osc = pde_oscillation(us, p, g, tau, o);
        } catch (const InsufficientExtremaError&) {
            return HopfSample{tau, -1.0, cplx(-1.0, 0.0)};  // decayed below the noise floor
        }
        const double omega = osc.period > 0.0 ? 2.0 * std::numbers::pi / osc.period : 0.0;
        return HopfSample{tau, osc.log_slope, cplx(osc.log_slope, omega)};
    };
    return detail::bisect_hopf(growth, o, method);
}

struct HopfTableRow {
    double epsilon, theta, a, b;
    std::optional<double> tau_h_nlep, tau_h_discretized, tau_h_pde;
};

inline void write_hopf_table_csv(const std::vector<HopfTableRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path);
    out.precision(10);
    auto opt = [](const std::optional<double>& v) {
        std::ostringstream os;
        os.precision(10);
        if (v) os << *v;
        return os.str();
    };
    out << "epsilon,theta,a,b,tau_h_nlep,tau_h_discretized,tau_h_pde\n";
    for (const auto& r : rows)
        out << r.epsilon << ',' << r.theta << ',' << r.a << ',' << r.b << ','
            << opt(r.tau_h_nlep) << ',' << opt(r.tau_h_discretized) << ',' << opt(r.tau_h_pde)
            << '\n';
}

}  // namespace spikelab::stability
