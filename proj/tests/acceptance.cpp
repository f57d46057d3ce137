// Acceptance criteria: one PASS/FAIL line per criterion, indented detail lines
// below it. Usage: acceptance [-o DIR] [criterion numbers...]
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spikelab/spikelab.hpp"

using namespace spikelab;
namespace fs = std::filesystem;

namespace {

struct Sub {
    std::string name;
    bool ok;
    std::string detail;
};

std::string num(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

fs::path g_out = "acceptance_out";

cli::RunOutcome run_builtin(const std::string& name) {
    cli::RunOptions o;
    o.output_dir = (g_out / name).string();
    o.check = true;
    return cli::run_scenario(*cli::find_builtin(name), o);
}

const nlohmann::json* find_check(const cli::RunOutcome& r, const std::string& name) {
    for (const auto& c : r.manifest["checks"])
        if (c["name"] == name) return &c;
    return nullptr;
}

Sub from_check(const cli::RunOutcome& r, const std::string& name) {
    const auto* c = find_check(r, name);
    if (!c) return {name, false, "check not reported"};
    return {name, (*c)["passed"].get<bool>(), (*c)["detail"].get<std::string>()};
}

// -- 1 --------------------------------------------------------------------
std::vector<Sub> hopf_bracket() {
    const auto r = run_builtin("fig5");
    std::vector<Sub> out{from_check(r, "tau_h_bracket"), from_check(r, "nlep_agreement")};
    const auto& pt = r.manifest["summary"][0];
    for (const char* m : {"pde_bisect", "discretized", "nlep"}) {
        if (!pt.contains(m)) continue;
        const auto& v = pt[m];
        out.push_back({std::string("info ") + m, true,
                       v.contains("tau_h") ? "tau_h=" + num(v["tau_h"].get<double>()) + " bracket [" +
                                                 num(v["tau_stable"].get<double>()) + ", " +
                                                 num(v["tau_unstable"].get<double>()) + "]"
                                           : v.dump()});
    }
    return out;
}

// -- 2, 3 -----------------------------------------------------------------

// "key=value ..." for the named columns of each row of a table artifact.
std::vector<Sub> table_rows(const fs::path& path, const std::vector<std::string>& cols) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    std::stringstream hs(line);
    for (std::string c; std::getline(hs, c, ',');) header.push_back(c);
    std::vector<Sub> out;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        std::string d;
        for (const auto& want : cols)
            for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i)
                if (header[i] == want) d += (d.empty() ? "" : " ") + want + "=" + cells[i];
        out.push_back({"info", true, d});
    }
    return out;
}

std::vector<Sub> convergence_chain() {
    const auto r = run_builtin("fig3");
    std::vector<Sub> out{from_check(r, "monotone_eps")};
    for (auto& s : table_rows(g_out / "fig3" / "steady_table.csv", {"epsilon", "rel_pde_match", "rel_match_subinner"}))
        out.push_back(s);
    return out;
}

std::vector<Sub> theta_degradation() {
    const auto r = run_builtin("fig4");
    std::vector<Sub> out{from_check(r, "monotone_theta")};
    for (auto& s : table_rows(g_out / "fig4" / "steady_table.csv", {"theta", "S_match", "S_subinner", "rel_match_subinner"}))
        out.push_back(s);
    return out;
}

// -- 4 --------------------------------------------------------------------
std::vector<Sub> drift_comparison() {
    const auto r = run_builtin("fig7");
    std::vector<Sub> out{from_check(r, "max_x0_diff"), from_check(r, "decay_rate")};
    const double eps = 5e-3, a = 1.0, b = 0.25, theta = 0.5;
    const double lam = stability::small_eigenvalue(eps, a, b, theta);
    out.push_back({"lambda_small_negative", lam < 0.0, "lambda_small=" + num(lam)});
    const double h = 1e-4;
    const double fd = (slowdyn::drift_velocity(h, eps, a, b, theta) - slowdyn::drift_velocity(-h, eps, a, b, theta)) /
                      (2.0 * h);
    const double rel = std::abs(fd - lam) / std::abs(lam);
    out.push_back({"dae_linearization", rel <= 1e-6, "d(dx0/dt)/dx0=" + num(fd) + ", rel gap " + num(rel)});
    return out;
}

// -- 5 --------------------------------------------------------------------
std::vector<Sub> oscillation_regime() {
    const auto r = run_builtin("fig1b");
    std::vector<Sub> out{from_check(r, "oscillation")};
    const auto& osc = r.manifest["summary"]["oscillation"];
    if (osc.is_object())
        out.push_back({"info", true, "amplitude " + num(osc["amplitude"].get<double>()) + ", period " +
                                         num(osc["period"].get<double>()) + ", log slope " +
                                         num(osc["log_slope"].get<double>())});
    return out;
}

// -- 6 --------------------------------------------------------------------
std::vector<Sub> property_suite() {
    std::vector<Sub> out;
    {
        double worst = 0.0;
        int count = 0;
        for (double theta : {0.0, 0.25, 0.5, 0.75})
            for (double S : {0.01, 0.03, 0.1, 0.2, 0.4, 0.6, 0.8}) {
                worst = std::max(worst, inner::first_integral_residual(inner::solve_inner(S, theta)));
                ++count;
            }
        for (double eps : {2e-2, 1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
            worst = std::max(worst, inner::first_integral_residual(steady::match_amplitude(eps, 1.0, 0.25, 0.5).profile));
            ++count;
        }
        out.push_back({"a first_integral", worst <= 1e-8,
                       "max residual " + num(worst) + " over " + std::to_string(count) + " profiles"});
    }
    {
        const auto p = make_model_params(1.0, 1.0, 0.5, 0.05, 1.0);
        const Grid g = make_grid(200);
        double worst = 0.0;
        for (auto scheme : {pde::TimeScheme::imex_euler, pde::TimeScheme::sbdf2, pde::TimeScheme::bdf2}) {
            pde::StepperOptions o;
            o.scheme = scheme;
            pde::Stepper s(p, g, homogeneous_fields(g.n, p.a, p.a), 0.01, o);
            FieldPair prev = s.state();
            for (int k = 0; k < 500; ++k) {
                s.step(0.01);
                for (std::size_t i = 0; i < g.n; ++i)
                    worst = std::max({worst, std::abs(s.state().l[i] - prev.l[i]), std::abs(s.state().k[i] - prev.k[i])});
                prev = s.state();
            }
        }
        out.push_back({"b homogeneous_fixed_point", worst <= 1e-13, "max change per step " + num(worst)});
    }
    {
        const double e = std::max({std::abs(inner::sech_moment(2.0) - 1.0),
                                   std::abs(inner::sech_moment(4.0) - 2.0 / 3.0),
                                   std::abs(inner::sech_moment(8.0) - 16.0 / 35.0)});
        double rec = 0.0;
        for (double p : {3.0, 5.5, 10.0, 41.0})
            rec = std::max(rec, std::abs(inner::sech_moment(p) / ((p - 2.0) / (p - 1.0) * inner::sech_moment(p - 2.0)) - 1.0));
        out.push_back({"c sech_moments", e <= 1e-12 && rec <= 1e-12,
                       "closed forms " + num(e) + ", recurrence " + num(rec)});
    }
    {
        double worst = 0.0;
        for (auto [a, b] : {std::pair{1.0, 1.0}, std::pair{1.0, 0.25}, std::pair{2.0, 1.0}})
            for (stability::cplx l : {stability::cplx(0.0), stability::cplx(0.5, 1.0), stability::cplx(-1.0, 3.0)})
                worst = std::max(worst, std::abs(stability::alpha_at(0.0, a, b, l) - 2.0));
        out.push_back({"d alpha_tau0", worst == 0.0, "max |alpha-2| " + num(worst)});
    }
    {
        const auto l0 = stability::canonical_nlep_leading(0.0, 1.0);
        const auto lh = stability::canonical_nlep_leading(0.5, 1.0);
        const auto l2 = stability::canonical_nlep_leading(2.0, 1.0);
        const bool ok = std::abs(l0 - 0.25) <= 1e-4 && lh.real() > 0.0 && l2.real() <= 0.0;
        out.push_back({"e canonical_nlep", ok,
                       "Lambda(0)=" + num(l0.real()) + ", Re Lambda(0.5)=" + num(lh.real()) +
                           ", Re Lambda(2)=" + num(l2.real())});
    }
    {
        ScopedWarningCapture quiet;
        const auto p = make_model_params(1.0, 1.0, 0.5, 5e-2, 1.7);
        const Grid g = make_grid(100, p.epsilon);
        const FieldPair us = stability::discrete_steady_state(p, g);
        const auto pen = stability::assemble_linearization(us, p, g);
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
        out.push_back({"f jacobian", worst / scale <= 1e-6, "relative gap " + num(worst / scale)});
    }
    {
        auto p = make_model_params(1.0, 1.0, 0.5, 0.05, 1.0);
        p.b = 0.0;
        const Grid g = make_grid(400);
        FieldPair u0{std::vector<double>(g.n), std::vector<double>(g.n)};
        for (std::size_t i = 0; i < g.n; ++i) {
            u0.l[i] = 1.0 + 0.5 * std::exp(-50.0 * g.x[i] * g.x[i]);
            u0.k[i] = 1.0 + 0.2 * std::cos(std::numbers::pi * (g.x[i] + 1.0));
        }
        const double m0 = pde::total_labor(u0, g);
        pde::Stepper s(p, g, u0, 0.01);
        while (s.time() < 5.0 - 1e-12) s.advance(5.0 - s.time());
        const double rate = std::abs(pde::total_labor(s.state(), g) - m0) / s.time();
        out.push_back({"g mass_conservation", rate <= 1e-10, "|dM|/T = " + num(rate)});
    }
    return out;
}

// -- 7 --------------------------------------------------------------------
std::vector<Sub> nlep_sign_check() {
    const auto s = cli::parse_scenario(R"([scenario]
name=nlep_f
kind=nlep_trace
[model]
a=1
b=1
epsilon=0.01
[sweep]
thetas=0,0.5
tau=0
lambda_min=0
lambda_max=2
samples=401
[check]
no_positive_real_root=true
)");
    cli::RunOptions o;
    o.output_dir = (g_out / "nlep_f").string();
    o.check = true;
    const auto r = cli::run_scenario(s, o);
    std::vector<Sub> out{from_check(r, "no_positive_real_root")};
    for (const auto& pt : r.manifest["summary"])
        out.push_back({"info theta=" + num(pt["theta"].get<double>()), true, "real roots " + pt["real_roots"].dump()});
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if ((a == "-o" || a == "--output") && i + 1 < argc) {
            g_out = argv[++i];
        } else {
            only.insert(std::atoi(a.c_str()));
        }
    }
    const std::vector<std::pair<std::string, std::function<std::vector<Sub>()>>> criteria = {
        {"hopf_bracket", hopf_bracket},
        {"convergence_chain", convergence_chain},
        {"theta_degradation", theta_degradation},
        {"drift_comparison", drift_comparison},
        {"oscillation_regime", oscillation_regime},
        {"property_suite", property_suite},
        {"nlep_sign_check", nlep_sign_check},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Sub> subs;
        bool ok = true;
        try {
            subs = criteria[k].second();
            for (const auto& s : subs)
                if (s.name.rfind("info", 0) != 0) ok = ok && s.ok;
        } catch (const std::exception& e) {
            ok = false;
            subs.push_back({"exception", false, e.what()});
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (ok ? "PASS " : "FAIL ") << id << ' ' << criteria[k].first << " (" << num(wall) << " s)\n";
        for (const auto& s : subs) {
            const bool info = s.name.rfind("info", 0) == 0;
            std::cout << "    " << (info ? "" : (s.ok ? "ok   " : "bad  ")) << s.name << ": " << s.detail << '\n';
        }
        std::cout.flush();
        failed += !ok;
    }
    return failed == 0 ? 0 : 1;
}
