#include <cmath>
#include <complex>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "spikelab/slowdyn.hpp"
#include "spikelab/stability.hpp"

using namespace spikelab;
using stability::cplx;

namespace {

const stability::NLEPContext& ctx_eps2() {
    static const auto c = stability::make_nlep_context(1e-2, 1.0, 1.0, 0.5);
    return c;
}

}  // namespace

TEST(NLEPContext, RowsAreStencilPlusPotential) {
    const auto& c = ctx_eps2();
    ASSERT_GT(c.size(), 10u);
    std::vector<double> v(c.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::cos(0.3 * static_cast<double>(i)) + 0.1 * i;
    const auto Lv = c.apply_local(v);
    const double ih2 = 1.0 / (c.h * c.h);
    for (std::size_t i : {std::size_t{0}, std::size_t{5}, c.size() / 2, c.size() - 1}) {
        const double vl = i == 0 ? v[1] : v[i - 1];
        const double vr = i + 1 == c.size() ? v[i - 1] : v[i + 1];
        const double expected = (vl - 2.0 * v[i] + vr) * ih2 + c.potential[i] * v[i];
        EXPECT_NEAR(Lv[i], expected, 1e-9 * std::abs(ih2 * v[i])) << i;
    }
    // Potential from its definition.
    for (std::size_t i = 0; i < c.size(); i += c.size() / 7) {
        const double K = c.K0[i], L = c.L0[i];
        const double pot = -1.0 + c.theta * std::pow(K, c.theta - 1.0) * std::pow(L, 1.0 - c.theta) +
                           (1.0 - c.theta) * std::pow(K, c.theta) * std::pow(L, 1.0 - c.theta);
        EXPECT_NEAR(c.potential[i], pot, 1e-12 * std::abs(pot));
    }
}

TEST(Secular, ConjugationSymmetry) {
    const auto& c = ctx_eps2();
    const cplx z(0.3, 0.4);
    for (double tau : {0.0, 1.0, 2.5}) {
        const cplx f = stability::nlep_secular(z, c, tau);
        const cplx g = stability::nlep_secular(std::conj(z), c, tau);
        EXPECT_NEAR(std::abs(g - std::conj(f)), 0.0, 1e-12 * std::abs(f)) << tau;
    }
}

TEST(Secular, DerivativeMatchesFiniteDifference) {
    const auto& c = ctx_eps2();
    const cplx z(-0.2, 0.9);
    const double tau = 1.3;
    const auto t = stability::evaluate_secular(c, z, tau, true);
    const double h = 1e-6;
    const cplx fd = (stability::nlep_secular(z + h, c, tau) - stability::nlep_secular(z - h, c, tau)) / (2.0 * h);
    EXPECT_NEAR(std::abs(t.df - fd) / std::abs(t.df), 0.0, 1e-6);
    // Far-field value of the resolvent against the constant-coefficient relation.
    EXPECT_LT(t.consistency_error, 1e-6);
}

TEST(Secular, NoPositiveRealRootAtTauZero) {
    for (double theta : {0.0, 0.5}) {
        const auto c = stability::make_nlep_context(1e-2, 1.0, 1.0, theta);
        const auto roots = stability::real_secular_roots(c, 0.0, 0.0, 2.0);
        EXPECT_TRUE(roots.empty()) << "theta=" << theta << " root " << (roots.empty() ? 0.0 : roots[0]);
    }
}

TEST(LeadingEigenvalue, StableWithoutReactionDelay) {
    for (double eps : {1e-2, 5e-3}) {
        for (double theta : {0.1, 0.5, 0.7}) {
            const auto c = stability::make_nlep_context(eps, 1.0, 1.0, theta);
            const auto ev = stability::leading_nlep_eigenvalue(c, 0.0);
            EXPECT_LT(ev.lambda.real(), 0.0) << "eps=" << eps << " theta=" << theta;
            for (double r : ev.roots.residuals) EXPECT_LE(r, 1e-8);
        }
    }
}

TEST(LeadingEigenvalue, UnstableComplexPairAtLargeDelay) {
    // At eps = 1e-2 the reduced threshold lies between tau = 8 and 12.
    const auto ev = stability::leading_nlep_eigenvalue(ctx_eps2(), 12.0);
    EXPECT_GT(ev.lambda.real(), 0.0);
    EXPECT_GT(ev.lambda.imag(), 0.1);
    EXPECT_LE(ev.residual, 1e-8);
    // The conjugate is a root too.
    const auto t = stability::evaluate_secular(ctx_eps2(), std::conj(ev.lambda), 12.0);
    EXPECT_LT(std::abs(t.f), 1e-8 * std::max(1.0, std::abs(t.D)));
}

TEST(LeadingEigenvalue, DenseSolveAgrees) {
    stability::NLEPOptions no;
    no.h = 0.06;
    const auto c = stability::make_nlep_context(2.5e-3, 1.0, 1.0, 0.5, no);
    stability::RootSearchOptions ro;
    ro.dense_check = true;
    ScopedWarningCapture cap;
    const auto ev = stability::leading_nlep_eigenvalue(c, 1.0, ro);
    ASSERT_TRUE(ev.dense_lambda.has_value());
    EXPECT_LE(std::abs(*ev.dense_lambda - ev.lambda), 1e-6 * std::max(1.0, std::abs(ev.lambda)));
    EXPECT_TRUE(cap.empty());
}

TEST(Hopf, NlepThresholdHasImaginaryCrossing) {
    stability::HopfOptions o;
    o.tau_lo = 4.0;
    o.tau_hi = 14.0;
    const auto r = stability::find_hopf_tau(1e-2, 1.0, 1.0, 0.5, stability::HopfMethod::nlep, o);
    EXPECT_LE(r.tau_unstable - r.tau_stable, o.tol);
    const auto c = stability::make_nlep_context(1e-2, 1.0, 1.0, 0.5);
    const auto ev = stability::leading_nlep_eigenvalue(c, r.tau_h);
    EXPECT_LT(std::abs(ev.lambda.real()), 0.01);
    EXPECT_GT(ev.lambda.imag(), 0.1);
    o.tau_lo = 0.05;
    o.tau_hi = 0.1;
    EXPECT_THROW(stability::find_hopf_tau(1e-2, 1.0, 1.0, 0.5, stability::HopfMethod::nlep, o),
                 BracketError);
}

TEST(Pencil, BlocksMatchJacobianAndDelay) {
    ScopedWarningCapture quiet;
    const auto p = make_model_params(1.0, 1.0, 0.5, 5e-2, 1.7);
    const Grid g = make_grid(120, p.epsilon);
    const FieldPair us = stability::discrete_steady_state(p, g);
    const auto pen = stability::assemble_linearization(us, p, g);
    for (std::size_t i = 0; i < g.n; ++i) {
        EXPECT_EQ(pen.B[pde::l_index(i)], p.tau);
        EXPECT_EQ(pen.B[pde::k_index(i)], 1.0);
    }
    // A against finite differences of the scaled right sides.
    const auto v = pde::interleave(us);
    double worst = 0.0, scale = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(v[j]));
        auto vp = v, vm = v;
        vp[j] += h;
        vm[j] -= h;
        const auto Fp = pde::interleave(pde::scaled_rhs(pde::deinterleave(vp), p, g));
        const auto Fm = pde::interleave(pde::scaled_rhs(pde::deinterleave(vm), p, g));
        for (std::size_t i = 0; i < v.size(); ++i) {
            worst = std::max(worst, std::abs((Fp[i] - Fm[i]) / (2.0 * h) - pen.A.at(i, j)));
            scale = std::max(scale, std::abs(pen.A.at(i, j)));
        }
    }
    EXPECT_LE(worst / scale, 1e-6);
}

TEST(Pencil, ReducedProblemIsLimitOfSmallDelay) {
    ScopedWarningCapture quiet;
    auto p = make_model_params(1.0, 1.0, 0.5, 5e-2, 0.0);
    const Grid g = make_grid(120, p.epsilon);
    const FieldPair us = stability::discrete_steady_state(p, g);
    stability::PencilEigenOptions o;
    o.nev = 5;
    const auto s0 = stability::pencil_eigenvalues_near(stability::assemble_linearization(us, p, g), 0.0, o);
    p.tau = 1e-6;
    const auto s1 = stability::pencil_eigenvalues_near(stability::assemble_linearization(us, p, g), 0.0, o);
    ASSERT_EQ(s0.eigenvalues.size(), s1.eigenvalues.size());
    for (std::size_t k = 0; k < s0.eigenvalues.size(); ++k) {
        EXPECT_LE(std::abs(s0.eigenvalues[k] - s1.eigenvalues[k]), 1e-3) << k;
        EXPECT_LE(s0.residuals[k], 1e-10);
        EXPECT_LE(s1.residuals[k], 1e-10);
    }
}

TEST(Pencil, TranslationalEigenvalueMatchesSmallEigenvalue) {
    const double eps = 5e-3, a = 1.0, b = 0.25, theta = 0.5;
    const auto p = make_model_params(a, b, theta, eps, 1.0);
    const Grid g = make_grid(3200, eps);
    const FieldPair us = stability::discrete_steady_state(p, g);
    const auto pen = stability::assemble_linearization(us, p, g);
    const auto ev = stability::pencil_eigenvalue_nearest(pen, cplx(-eps * eps, 0.0));
    ASSERT_TRUE(ev.has_value());
    EXPECT_LT(std::abs(ev->imag()), 1e-12);
    EXPECT_LT(std::abs(*ev), 10.0 * eps * eps);  // O(eps^2)
    const double lam = stability::small_eigenvalue(eps, a, b, theta);
    EXPECT_NEAR(ev->real() / lam, 1.0, 0.3);
}

TEST(Adjoint, FirstIntegralIdentity) {
    const double S = 0.1, theta = 0.5;
    const auto prof = inner::solve_inner(S, theta);
    // G(K) = int_S^K z^theta (S e^{z-S})^{1-theta} dz by Gauss-Kronrod.
    auto G = [&](double K) {
        auto f = [&](double z) { return std::pow(z, theta) * std::pow(S * std::exp(z - S), 1.0 - theta); };
        return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, S, K, 10, 1e-15);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < prof.size(); i += std::max<std::size_t>(1, prof.size() / 40)) {
        const double K = prof.K0[i];
        const double lhs = prof.K0y[i] * prof.K0y[i] - (K * K - S * S);
        worst = std::max(worst, std::abs(lhs + 2.0 * G(K)));
    }
    EXPECT_LE(worst, 1e-8);
}

TEST(Adjoint, StructureAndSign) {
    for (double S : {0.05, 0.1, 0.3}) {
        const auto prof = inner::solve_inner(S, 0.5);
        const auto ad = stability::compute_adjoint_P(prof);
        ASSERT_EQ(ad.Q.size(), prof.size());
        for (std::size_t i = 0; i < prof.size(); ++i) ASSERT_EQ(ad.Q[i], prof.K0y[i]);
        EXPECT_EQ(ad.P.front(), 0.0);
        EXPECT_LT(ad.P_inf, 0.0) << S;
        EXPECT_LT(ad.P.back(), 0.0);
    }
}

TEST(SmallEigenvalue, NegativeAndEqualToDriftRate) {
    for (double eps : {1e-2, 5e-3}) {
        for (double theta : {0.1, 0.5, 0.7}) {
            for (double b : {0.25, 1.0}) {
                const double lam = stability::small_eigenvalue(eps, 1.0, b, theta);
                EXPECT_LT(lam, 0.0);
                const double rate = slowdyn::linear_growth_rate(eps, 1.0, b, theta);
                EXPECT_NEAR(lam, rate, 1e-12 * std::abs(lam));
            }
        }
    }
}

TEST(Canonical, LocalProblemEigenvalue) {
    for (double r : {1.0, 2.0}) {
        const auto sp = stability::canonical_nlep_spectrum(0.0, r);
        EXPECT_NEAR(sp.eigenvalues.front().real(), 0.25, 1e-4) << r;
        EXPECT_NEAR(sp.eigenvalues.front().imag(), 0.0, 1e-12);
        for (std::size_t k = 0; k < 5; ++k) EXPECT_LE(sp.residuals[k], 1e-8);
    }
    EXPECT_EQ(stability::canonical_nlep_leading(0.0, 1.0), stability::canonical_nlep_leading(0.0, 2.0));
    EXPECT_THROW(stability::canonical_nlep_spectrum(0.0, 0.5), ParameterDomainError);
}

TEST(Canonical, MultiplierThreshold) {
    EXPECT_GT(stability::canonical_nlep_leading(0.5, 1.0).real(), 0.0);
    EXPECT_LE(stability::canonical_nlep_leading(2.0, 1.0).real(), 0.0);
}

TEST(Alpha, TwoWithoutDelay) {
    for (cplx lam : {cplx(0.0), cplx(0.7, 1.3), cplx(-2.0, 0.1)})
        EXPECT_NEAR(std::abs(stability::alpha_at(0.0, 1.0, 0.25, lam) - 2.0), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(stability::alpha_at(0.0, 1e-10, 1.0, cplx(0.4, 0.2)) - 2.0), 0.0, 1e-12);
}

TEST(Alpha, SineCosineForm) {
    // alpha = 2 s sin(s) cos(mu) / (2 s sin(s) cos(mu) - mu sin(mu) cos(s)), s = sqrt(ab).
    auto oracle = [](double tau, double a, double b, cplx lam) {
        const double s = std::sqrt(a * b);
        const cplx mu = std::sqrt(cplx(a * b - tau * lam.real(), -tau * lam.imag()));
        const cplx num = 2.0 * s * std::sin(s) * std::cos(mu);
        return num / (num - mu * std::sin(mu) * std::cos(s));
    };
    for (cplx lam : {cplx(0.0), cplx(0.2, 0.0), cplx(0.1, 1.1), cplx(-0.4, 2.0)}) {
        const cplx got = stability::alpha_at(1.0, 1.0, 1.0, lam);
        EXPECT_NEAR(std::abs(got - oracle(1.0, 1.0, 1.0, lam)), 0.0, 1e-12 * std::abs(got));
    }
    EXPECT_THROW(stability::alpha_at(1.0, 3.0, 1.0, cplx(0.0)), ParameterDomainError);
}
