#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "spikelab/slowdyn.hpp"

using namespace spikelab;

namespace {

constexpr double kEps = 1e-2, kA = 1.0, kB = 0.25, kTheta = 0.5;

std::string first_line(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string s;
    std::getline(in, s);
    return s;
}

}  // namespace

TEST(DriftVelocity, VanishesAtCenter) {
    EXPECT_EQ(slowdyn::tangent_sum(0.0, kA, kB), 0.0);
    EXPECT_EQ(slowdyn::drift_velocity(0.0, kEps, kA, kB, kTheta), 0.0);
}

TEST(DriftVelocity, PointsTowardCenter) {
    const auto e = slowdyn::evaluate_drift(0.5, 5e-3, 1.0, 0.25, 0.5);
    EXPECT_LT(e.P_inf, 0.0);
    EXPECT_GT(slowdyn::tangent_sum(0.5, 1.0, 0.25), 0.0);
    EXPECT_LT(e.velocity, 0.0);
    EXPECT_GT(e.energy, 0.0);
    EXPECT_LE(e.residual, 1e-8);
}

TEST(DriftVelocity, OddInCenter) {
    const double vp = slowdyn::drift_velocity(0.3, kEps, kA, kB, kTheta);
    const double vm = slowdyn::drift_velocity(-0.3, kEps, kA, kB, kTheta);
    EXPECT_NEAR(vp, -vm, 1e-12 * std::abs(vp));
}

TEST(DriftVelocity, LinearizationEqualsSmallEigenvalue) {
    const double h = 1e-4;
    const double fd = (slowdyn::drift_velocity(h, kEps, kA, kB, kTheta) -
                       slowdyn::drift_velocity(-h, kEps, kA, kB, kTheta)) / (2.0 * h);
    const double lam = stability::small_eigenvalue(kEps, kA, kB, kTheta);
    EXPECT_NEAR(fd / lam, 1.0, 1e-6);
}

TEST(DriftVelocity, TimeReadings) {
    slowdyn::DriftOptions lit;
    lit.reading = slowdyn::TimeReading::slow_time_literal;
    const double fast = slowdyn::drift_velocity(0.4, kEps, kA, kB, kTheta);
    const double slow = slowdyn::drift_velocity(0.4, kEps, kA, kB, kTheta, lit);
    EXPECT_NEAR(slow, kEps * fast, 1e-14 * std::abs(fast));
}

TEST(DriftVelocity, OutsideTangentRegion) {
    EXPECT_THROW(slowdyn::drift_velocity(0.7, kEps, 1.0, 1.0, kTheta), ParameterDomainError);
    EXPECT_THROW(slowdyn::integrate_drift(1.0, 10.0, kEps, kA, kB, kTheta), ParameterDomainError);
    EXPECT_THROW(slowdyn::integrate_drift(0.2, 0.0, kEps, kA, kB, kTheta), ParameterDomainError);
}

TEST(IntegrateDrift, EquilibriumStaysPut) {
    const auto tr = slowdyn::integrate_drift(0.0, 1e5, kEps, kA, kB, kTheta, {}, 11);
    ASSERT_EQ(tr.t.size(), 11u);
    EXPECT_TRUE(tr.completed);
    for (double x : tr.x0) EXPECT_EQ(x, 0.0);
    EXPECT_DOUBLE_EQ(tr.t.back(), 1e5);
}

TEST(IntegrateDrift, MonotoneDecayAtSmallEigenvalueRate) {
    const double lam = stability::small_eigenvalue(kEps, kA, kB, kTheta);
    const double t_end = 4.0 / std::abs(lam);
    const auto tr = slowdyn::integrate_drift(0.05, t_end, kEps, kA, kB, kTheta, {}, 41);
    ASSERT_TRUE(tr.completed) << tr.failure;
    for (std::size_t i = 1; i < tr.x0.size(); ++i) {
        EXPECT_LT(tr.x0[i], tr.x0[i - 1]);
        EXPECT_GT(tr.x0[i], 0.0);
    }
    for (double r : tr.residual) EXPECT_LE(r, 1e-8);
    const double rate = slowdyn::log_decay_rate(tr.t, tr.x0, 0.5 * t_end);
    EXPECT_NEAR(rate / lam, 1.0, 0.05);
}

TEST(IntegrateDrift, MirrorSymmetric) {
    const double t_end = 2e5;
    const auto p = slowdyn::integrate_drift(0.4, t_end, kEps, kA, kB, kTheta, {}, 11);
    const auto m = slowdyn::integrate_drift(-0.4, t_end, kEps, kA, kB, kTheta, {}, 11);
    ASSERT_TRUE(p.completed && m.completed);
    for (std::size_t i = 0; i < p.x0.size(); ++i) EXPECT_NEAR(p.x0[i], -m.x0[i], 1e-7);
    EXPECT_LT(p.x0.back(), 0.4);
}

TEST(Equilibrium, CenteredForSymmetricDomain) {
    for (auto [a, b] : {std::pair{1.0, 0.25}, std::pair{1.0, 1.0}, std::pair{2.0, 1.0}}) {
        const auto e = slowdyn::drift_equilibrium(a, b);
        EXPECT_EQ(e.x0, 0.0) << a << "," << b;
    }
}

TEST(Equilibrium, SingleSignChangeOnDenseScan) {
    // Independent scan: count sign changes of the tangent sum away from poles.
    const double a = 2.0, b = 1.0, s = std::sqrt(a * b);
    int changes = 0;
    double prev = slowdyn::tangent_sum(-0.9, a, b);
    for (int k = 1; k <= 18000; ++k) {
        const double x = -0.9 + 1.8 * k / 18000.0;
        const double cur = slowdyn::tangent_sum(x, a, b);
        const double xm = x - 1.8 / 18000.0;
        const bool pole = std::cos(s * (x + 1.0)) * std::cos(s * (xm + 1.0)) <= 0.0 ||
                          std::cos(s * (x - 1.0)) * std::cos(s * (xm - 1.0)) <= 0.0;
        if (!pole && ((prev < 0.0) != (cur < 0.0))) ++changes;
        prev = cur;
    }
    EXPECT_EQ(changes, 1);
    EXPECT_EQ(slowdyn::drift_equilibrium(a, b).sign_changes, 1);
}

TEST(LogDecayRate, ExactOnExponential) {
    std::vector<double> t, x;
    for (int i = 0; i <= 50; ++i) {
        t.push_back(10.0 * i);
        x.push_back(-0.3 * std::exp(-2e-3 * t.back()));
    }
    EXPECT_NEAR(slowdyn::log_decay_rate(t, x, 100.0), -2e-3, 1e-15);
    EXPECT_THROW(slowdyn::log_decay_rate(t, x, 495.0), InsufficientExtremaError);
}

TEST(Output, CsvHeaders) {
    const auto dir = std::filesystem::temp_directory_path() / "spikelab_test_slowdyn";
    std::filesystem::create_directories(dir);
    const auto tr = slowdyn::integrate_drift(0.0, 10.0, kEps, kA, kB, kTheta, {}, 3);
    slowdyn::write_drift_csv(tr, (dir / "drift.csv").string());
    EXPECT_EQ(first_line(dir / "drift.csv"), "t,x0,S0,velocity");
    std::vector<pde::SpikeObservation> track(2);
    track[1].t = 8.0;
    slowdyn::write_drift_comparison_csv(tr, track, (dir / "cmp.csv").string());
    EXPECT_EQ(first_line(dir / "cmp.csv"), "t,x0_dae,S0_dae,t_pde,x0_pde");
    EXPECT_EQ(slowdyn::nearest_observation(track, 5.0).t, 8.0);
    EXPECT_EQ(slowdyn::nearest_observation(track, 3.0).t, 0.0);
    std::filesystem::remove_all(dir);
}

TEST(DriftState, SlowTimeAndAmplitude) {
    const auto tr = slowdyn::integrate_drift(0.3, 1e4, kEps, kA, kB, kTheta, {}, 3);
    const auto st = slowdyn::drift_state_at(tr, 2, kEps, kA, kB, kTheta);
    EXPECT_DOUBLE_EQ(st.T, std::pow(kEps, 3) * 1e4);
    EXPECT_NEAR(st.S0 / tr.S0[2], 1.0, 1e-10);
    EXPECT_EQ(st.profile.S, st.S0);
}
