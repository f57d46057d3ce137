#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "spikelab/pdesim.hpp"
#include "spikelab/steady.hpp"

using namespace spikelab;

namespace {

// Tabulates lhs(S) = S*weight and rhs(S) = eps*b*I(S) on a log-spaced S
// ladder, brackets the first sign change and bisects.
double sweep_and_bisect(double weight, double eps, double a, double b, double theta) {
    auto g = [&](double S) {
        return S * weight - eps * b * inner::compute_I(inner::solve_inner(S, theta), a, b);
    };
    const int n = 40;
    double Sp = eps / 10.0, gp = g(Sp);
    for (int k = 1; k <= n; ++k) {
        const double S = eps / 10.0 * std::pow(0.9 / (eps / 10.0), static_cast<double>(k) / n);
        const double gs = g(S);
        if ((gp < 0.0) != (gs < 0.0)) {
            double lo = Sp, hi = S;
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                ((g(mid) < 0.0) == (gp < 0.0) ? lo : hi) = mid;
            }
            return 0.5 * (lo + hi);
        }
        Sp = S;
        gp = gs;
    }
    return -1.0;
}

}  // namespace

TEST(MatchAmplitude, AgreesWithSweepOracle) {
    const double eps = 1e-2, a = 1.0, b = 0.25, theta = 0.5;
    const double sab = std::sqrt(a * b);
    const auto m = steady::match_amplitude(eps, a, b, theta);
    const double oracle = sweep_and_bisect(sab * std::tan(sab), eps, a, b, theta);
    ASSERT_GT(oracle, 0.0);
    EXPECT_NEAR(m.S / oracle, 1.0, 1e-5);
    EXPECT_LT(m.residual, 1e-10);
    EXPECT_NEAR(m.profile.S, m.S, 0.0);
}

TEST(MatchAmplitude, WarmStartGivesSameRoot) {
    steady::MatchOptions opt;
    const auto cold = steady::match_amplitude(5e-3, 1.0, 0.25, 0.5, opt);
    for (double guess : {0.5 * cold.S, 0.99 * cold.S, 1.3 * cold.S}) {
        opt.S_guess = guess;
        const auto warm = steady::match_amplitude(5e-3, 1.0, 0.25, 0.5, opt);
        EXPECT_NEAR(warm.S / cold.S, 1.0, 1e-12) << "guess " << guess;
    }
}

TEST(MatchAmplitude, DomainErrors) {
    EXPECT_THROW(steady::match_amplitude(1e-2, 2.0, 2.0, 0.5), ParameterDomainError);
    EXPECT_THROW(steady::match_amplitude(0.0, 1.0, 1.0, 0.5), ParameterDomainError);
}

TEST(OffcenterAmplitude, CenteredCaseReducesToMatching) {
    EXPECT_NEAR(steady::offcenter_weight(0.0, 1.0, 0.25), 2.0 * std::tan(0.5), 1e-15);
    const auto m0 = steady::match_amplitude(1e-2, 1.0, 0.25, 0.5);
    const auto m1 = steady::offcenter_amplitude(0.0, 1e-2, 1.0, 0.25, 0.5);
    EXPECT_NEAR(m1.S / m0.S, 1.0, 1e-13);
}

TEST(OffcenterAmplitude, AgreesWithSweepOracle) {
    const double x0 = 0.5, eps = 5e-3, a = 1.0, b = 0.25, theta = 0.5;
    const double sab = std::sqrt(a * b);
    const double w = 0.5 * sab * (std::tan(sab * (1.0 - x0)) + std::tan(sab * (1.0 + x0)));
    const auto m = steady::offcenter_amplitude(x0, eps, a, b, theta);
    const double oracle = sweep_and_bisect(w, eps, a, b, theta);
    EXPECT_NEAR(m.S / oracle, 1.0, 1e-5);
}

TEST(OffcenterAmplitude, EvenInCenter) {
    const auto p = steady::offcenter_amplitude(0.3, 5e-3, 1.0, 0.25, 0.5);
    const auto m = steady::offcenter_amplitude(-0.3, 5e-3, 1.0, 0.25, 0.5);
    EXPECT_NEAR(p.S / m.S, 1.0, 1e-13);
}

TEST(OffcenterAmplitude, TangentValidity) {
    EXPECT_THROW(steady::offcenter_amplitude(0.7, 1e-2, 1.0, 1.0, 0.5), ParameterDomainError);
    EXPECT_THROW(steady::offcenter_amplitude(1.0, 1e-2, 1.0, 0.25, 0.5), ParameterDomainError);
    EXPECT_NO_THROW(steady::offcenter_amplitude(0.5, 1e-2, 1.0, 1.0, 0.5));
}

TEST(SteadyState, CenteredProfileIsEvenWithPeakAtOrigin) {
    const auto p = make_model_params(1.0, 1.0, 0.5, 1e-2, 1.0);
    const Grid g = make_grid(3200, p.epsilon);
    const auto st = steady::build_steady_state(p, g);
    double asym = 0.0;
    for (std::size_t i = 0; i < g.n; ++i) asym = std::max(asym, std::abs(st.k_s[i] - st.k_s[g.n - 1 - i]));
    EXPECT_LE(asym, 1e-10);
    const auto peak = std::max_element(st.k_s.begin(), st.k_s.end()) - st.k_s.begin();
    EXPECT_NEAR(g.x[static_cast<std::size_t>(peak)], 0.0, g.dx);
    EXPECT_TRUE(st.far_field_ok);
}

TEST(SteadyState, FlatAtWallsAndHeightMatchesCore) {
    const auto p = make_model_params(1.0, 0.25, 0.5, 5e-3, 1.0);
    const Grid g = make_grid(3201, p.epsilon);  // odd: x = 0 is a cell center
    const auto st = steady::build_steady_state(p, g, 0.0);
    const double sab = p.sqrt_ab();
    // Outer branch slope at the walls: S sqrt(ab) sin(0)/cos(sqrt(ab)) = 0.
    const double h = 1e-6;
    EXPECT_NEAR((steady::outer_branch(1.0, 0.0, st.S, sab) - steady::outer_branch(1.0 - h, 0.0, st.S, sab)) / h,
                0.0, 1e-6);
    EXPECT_NEAR((steady::outer_branch(-1.0 + h, 0.0, st.S, sab) - steady::outer_branch(-1.0, 0.0, st.S, sab)) / h,
                0.0, 1e-6);
    // Discrete wall slope of l_s is second order in dx.
    EXPECT_LT(std::abs(st.l_s[1] - st.l_s[0]) / g.dx, 10.0 * g.dx);
    // Peak of k_s sits on the core height.
    const double peak = *std::max_element(st.k_s.begin(), st.k_s.end());
    EXPECT_NEAR(peak - st.S, st.inner.xi - st.S, 1e-3 * st.inner.xi);
}

TEST(SteadyState, CompositeIsCloseToDiscreteSteadyState) {
    const auto p = make_model_params(1.0, 1.0, 0.5, 1e-2, 1.0);
    const Grid g = make_grid(3200, p.epsilon);
    const auto st = steady::build_steady_state(p, g);
    const auto r = pde::relax_to_steady(p, g, st.fields());
    double diff = 0.0;
    for (std::size_t i = 0; i < g.n; ++i) diff = std::max(diff, std::abs(r.u.k[i] - st.k_s[i]));
    // The composite carries O(eps)-relative errors only.
    EXPECT_LT(diff / st.inner.xi, 0.2);
    const auto obs = pde::detect_spike(r.u, g);
    EXPECT_NEAR(obs.x0, 0.0, g.dx / 10.0);
}

TEST(SteadyState, OffcenterPeakLocation) {
    const auto p = make_model_params(1.0, 0.25, 0.5, 5e-3, 1.0);
    const Grid g = make_grid(3200, p.epsilon);
    const auto st = steady::build_steady_state(p, g, 0.5);
    const auto obs = pde::detect_spike(st.fields(), g);
    EXPECT_NEAR(obs.x0, 0.5, g.dx);
    EXPECT_FALSE(obs.degenerate);
}

TEST(SteadyState, ConvergenceChainAndThetaTrend) {
    // Sub-inner vs matched discrepancy shrinks with eps and grows with theta.
    ScopedWarningCapture quiet;
    std::vector<double> d_eps;
    for (double eps : {2e-2, 1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
        const double Sm = steady::match_amplitude(eps, 1.0, 0.25, 0.5).S;
        const double Ss = inner::subinner_asymptotics(eps, 1.0, 0.25, 0.5).S;
        d_eps.push_back(std::abs(Sm - Ss) / Sm);
    }
    for (std::size_t i = 1; i < d_eps.size(); ++i) EXPECT_LT(d_eps[i], d_eps[i - 1]);
    std::vector<double> d_theta;
    for (double theta : {0.1, 0.3, 0.5, 0.7}) {
        const double Sm = steady::match_amplitude(2.5e-3, 1.0, 1.0, theta).S;
        const double Ss = inner::subinner_asymptotics(2.5e-3, 1.0, 1.0, theta).S;
        d_theta.push_back(std::abs(Sm - Ss) / Sm);
    }
    for (std::size_t i = 1; i < d_theta.size(); ++i) EXPECT_GT(d_theta[i], d_theta[i - 1]);
}

TEST(SteadyState, MetadataCarriesParameters) {
    const auto p = make_model_params(1.0, 1.0, 0.5, 1e-2, 1.0);
    const auto st = steady::build_steady_state(p, make_grid(1600, p.epsilon));
    const auto j = steady::steady_metadata(st);
    EXPECT_EQ(j["epsilon"].get<double>(), 1e-2);
    EXPECT_EQ(j["S"].get<double>(), st.S);
    EXPECT_EQ(j["xi"].get<double>(), st.inner.xi);
}
