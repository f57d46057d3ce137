#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/crc.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "spikelab/core.hpp"
#include "spikelab/errors.hpp"
#include "spikelab/innersolve.hpp"
#include "spikelab/pdesim.hpp"
#include "spikelab/slowdyn.hpp"
#include "spikelab/stability.hpp"
#include "spikelab/steady.hpp"

namespace spikelab::cli {

inline constexpr const char* kVersion = "0.1.0";

enum class ScenarioKind { simulate, steady_sweep, hopf_sweep, drift_compare, nlep_trace, canonical_nlep };

inline std::string to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::simulate: return "simulate";
        case ScenarioKind::steady_sweep: return "steady_sweep";
        case ScenarioKind::hopf_sweep: return "hopf_sweep";
        case ScenarioKind::drift_compare: return "drift_compare";
        case ScenarioKind::nlep_trace: return "nlep_trace";
        case ScenarioKind::canonical_nlep: return "canonical_nlep";
    }
    return "?";
}

inline ScenarioKind kind_from_string(const std::string& s) {
    for (auto k : {ScenarioKind::simulate, ScenarioKind::steady_sweep, ScenarioKind::hopf_sweep,
                   ScenarioKind::drift_compare, ScenarioKind::nlep_trace,
                   ScenarioKind::canonical_nlep})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown scenario kind '" + s + "'");
}

using Document = boost::property_tree::ptree;

/// A named pipeline plus its flat sectioned parameter document.
struct Scenario {
    std::string name;
    ScenarioKind kind = ScenarioKind::simulate;
    Document doc;  // every section, including [scenario] and [output]
    std::string output_dir;
};

// ---------------------------------------------------------------------------
// Document access

namespace detail {

inline const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"scenario", {"name", "kind", "workers"}},
        {"model", {"a", "b", "theta", "epsilon", "tau"}},
        {"grid", {"n", "n_per_epsilon"}},
        {"time", {"dt", "t_end", "save_every", "track_every", "scheme", "adaptive", "rtol", "atol"}},
        {"initial", {"type", "x0", "width", "mass", "perturbation", "path", "l0", "k0"}},
        {"output", {"dir", "prefix"}},
        {"sweep", {"epsilons", "thetas", "S_values", "methods", "tau_lo", "tau_hi", "nlep_tau_lo",
                   "nlep_tau_hi", "tol", "keep_S2", "alphas", "r_values", "lambda_min",
                   "lambda_max", "samples", "tau", "profiles_theta"}},
        {"analysis", {"window_start", "window_end", "decay_from"}},
        {"drift", {"x0_init", "t_end", "samples", "reading"}},
        {"check", {"oscillation", "x0_monotone", "monotone_eps", "monotone_theta",
                   "xi_decreasing_in_S", "tau_h_min", "tau_h_max", "nlep_rel_tol", "max_x0_diff",
                   "rate_rel_tol", "no_positive_real_root", "lambda0", "lambda0_tol",
                   "positive_at", "none_positive_at"}},
    };
    return keys;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

inline bool has(const Document& d, const std::string& key) {
    return static_cast<bool>(d.get_optional<std::string>(key));
}

inline double get_double(const Document& d, const std::string& key) {
    const auto v = d.get_optional<std::string>(key);
    if (!v) throw ConfigError("missing key " + key);
    try {
        std::size_t pos = 0;
        const double x = std::stod(*v, &pos);
        if (detail::trim(v->substr(pos)).size() != 0) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key " + key + " is not a number: '" + *v + "'");
    }
}

inline double get_double(const Document& d, const std::string& key, double fallback) {
    return has(d, key) ? get_double(d, key) : fallback;
}

inline std::string get_string(const Document& d, const std::string& key, const std::string& fallback) {
    return detail::trim(d.get<std::string>(key, fallback));
}

inline bool get_bool(const Document& d, const std::string& key, bool fallback) {
    if (!has(d, key)) return fallback;
    const std::string v = get_string(d, key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key " + key + " is not a boolean: '" + v + "'");
}

inline std::vector<std::string> get_list(const Document& d, const std::string& key) {
    std::vector<std::string> out;
    std::stringstream ss(get_string(d, key, ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::vector<double> get_double_list(const Document& d, const std::string& key) {
    std::vector<double> out;
    for (const auto& s : get_list(d, key)) {
        try {
            out.push_back(std::stod(s));
        } catch (const std::exception&) {
            throw ConfigError("key " + key + " has a non-numeric entry '" + s + "'");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline Document to_document(const Scenario& s) {
    Document d = s.doc;
    d.put("scenario.name", s.name);
    d.put("scenario.kind", to_string(s.kind));
    if (!s.output_dir.empty()) d.put("output.dir", s.output_dir);
    return d;
}

inline std::string serialize(const Scenario& s) {
    std::ostringstream os;
    boost::property_tree::write_ini(os, to_document(s));
    return os.str();
}

inline Scenario scenario_from_document(const Document& d) {
    for (const auto& [section, body] : d) {
        const auto it = detail::known_keys().find(section);
        if (it == detail::known_keys().end()) throw ConfigError("unknown section [" + section + "]");
        if (!body.data().empty()) throw ConfigError("key '" + section + "' outside any section");
        for (const auto& [key, value] : body) {
            if (!it->second.count(key))
                throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
            if (!value.empty()) throw ConfigError("nested key under " + section + "." + key);
        }
    }
    Scenario s;
    s.doc = d;
    s.name = get_string(d, "scenario.name", "");
    if (s.name.empty()) throw ConfigError("scenario.name is required");
    s.kind = kind_from_string(get_string(d, "scenario.kind", ""));
    s.output_dir = get_string(d, "output.dir", "");
    return s;
}

inline Scenario parse_scenario(const std::string& text) {
    std::istringstream is(text);
    Document d;
    try {
        boost::property_tree::read_ini(is, d);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    return scenario_from_document(d);
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline ModelParams model_from(const Document& d) {
    try {
        return make_model_params(get_double(d, "model.a"), get_double(d, "model.b"),
                                 get_double(d, "model.theta"), get_double(d, "model.epsilon"),
                                 get_double(d, "model.tau", 1.0));
    } catch (const ParameterDomainError& e) {
        throw ConfigError(std::string("invalid [model]: ") + e.what());
    }
}

inline void require_keys(const Document& d, std::initializer_list<const char*> keys) {
    for (const char* k : keys)
        if (!has(d, k)) throw ConfigError(std::string("missing key ") + k);
}

inline void require_positive_list(const Document& d, const std::string& key, bool required = true) {
    const auto v = get_double_list(d, key);
    if (required && v.empty()) throw ConfigError("list " + key + " is empty");
    for (double x : v)
        if (!(x > 0.0)) throw ConfigError("list " + key + " must hold positive values");
}

}  // namespace detail

/// Checks every parameter the pipeline will read; throws ConfigError.
inline void validate(const Scenario& s) {
    const Document& d = s.doc;
    const int workers = static_cast<int>(get_double(d, "scenario.workers", 1.0));
    if (workers < 1) throw ConfigError("scenario.workers must be >= 1");
    switch (s.kind) {
        case ScenarioKind::simulate: {
            detail::require_keys(d, {"model.a", "model.b", "model.theta", "model.epsilon",
                                     "model.tau", "grid.n", "time.dt", "time.t_end"});
            const ModelParams p = detail::model_from(d);
            if (!(p.tau > 0.0)) throw ConfigError("simulation requires model.tau > 0");
            if (get_double(d, "grid.n") < 8) throw ConfigError("grid.n must be >= 8");
            if (!(get_double(d, "time.dt") > 0.0) || !(get_double(d, "time.t_end") > 0.0))
                throw ConfigError("time.dt and time.t_end must be positive");
            const std::string type = get_string(d, "initial.type", "steady");
            if (type != "steady" && type != "gaussian" && type != "homogeneous" && type != "from_file")
                throw ConfigError("unknown initial.type '" + type + "'");
            if (type == "from_file" && get_string(d, "initial.path", "").empty())
                throw ConfigError("initial.path is required for from_file");
            if (type == "steady" || type == "gaussian") {
                const double x0 = get_double(d, "initial.x0", 0.0);
                if (!(std::abs(x0) < 1.0)) throw ConfigError("initial.x0 must lie in (-1,1)");
            }
            try {
                pde::scheme_from_string(get_string(d, "time.scheme", "sbdf2"));
            } catch (const Error& e) {
                throw ConfigError(e.what());
            }
            break;
        }
        case ScenarioKind::steady_sweep: {
            detail::require_keys(d, {"model.a", "model.b"});
            if (!has(d, "sweep.S_values")) {
                detail::require_positive_list(d, "sweep.epsilons");
                detail::require_positive_list(d, "sweep.thetas");
                for (double e : get_double_list(d, "sweep.epsilons"))
                    for (double t : get_double_list(d, "sweep.thetas")) {
                        Document m = d;
                        m.put("model.epsilon", e);
                        m.put("model.theta", t);
                        detail::model_from(m);
                    }
                if (get_double(d, "grid.n_per_epsilon", 32.0) < 16.0)
                    throw ConfigError("grid.n_per_epsilon must be >= 16");
            } else {
                for (double S : get_double_list(d, "sweep.S_values"))
                    if (!(S > 0.0 && S < 1.0)) throw ConfigError("sweep.S_values must lie in (0,1)");
                detail::require_positive_list(d, "sweep.thetas");
            }
            break;
        }
        case ScenarioKind::hopf_sweep: {
            detail::require_keys(d, {"model.a", "model.b", "sweep.methods"});
            detail::require_positive_list(d, "sweep.epsilons");
            detail::require_positive_list(d, "sweep.thetas");
            for (const auto& m : get_list(d, "sweep.methods")) {
                try {
                    stability::hopf_method_from_string(m);
                } catch (const Error& e) {
                    throw ConfigError(e.what());
                }
            }
            for (double e : get_double_list(d, "sweep.epsilons"))
                for (double t : get_double_list(d, "sweep.thetas")) {
                    Document m = d;
                    m.put("model.epsilon", e);
                    m.put("model.theta", t);
                    detail::model_from(m);
                }
            if (!(get_double(d, "sweep.tau_lo", 0.5) < get_double(d, "sweep.tau_hi", 3.0)))
                throw ConfigError("sweep.tau_lo must be below sweep.tau_hi");
            break;
        }
        case ScenarioKind::drift_compare: {
            detail::require_keys(d, {"model.a", "model.b", "model.theta", "model.epsilon",
                                     "model.tau", "drift.x0_init", "drift.t_end"});
            const ModelParams p = detail::model_from(d);
            try {
                steady::require_offcenter_valid(get_double(d, "drift.x0_init"), p.a, p.b);
            } catch (const ParameterDomainError& e) {
                throw ConfigError(e.what());
            }
            if (!(get_double(d, "drift.t_end") > 0.0)) throw ConfigError("drift.t_end must be positive");
            const std::string r = get_string(d, "drift.reading", "fast_time");
            if (r != "fast_time" && r != "slow_time_literal")
                throw ConfigError("drift.reading must be fast_time or slow_time_literal");
            break;
        }
        case ScenarioKind::nlep_trace: {
            detail::require_keys(d, {"model.a", "model.b", "model.epsilon"});
            if (get_double_list(d, "sweep.thetas").empty()) throw ConfigError("sweep.thetas is empty");
            for (double t : get_double_list(d, "sweep.thetas"))
                if (!(t >= 0.0 && t < 1.0)) throw ConfigError("sweep.thetas must lie in [0,1)");
            require_outer_valid(get_double(d, "model.a"), get_double(d, "model.b"));
            if (!(get_double(d, "sweep.lambda_min", 0.0) < get_double(d, "sweep.lambda_max", 2.0)))
                throw ConfigError("sweep.lambda_min must be below sweep.lambda_max");
            break;
        }
        case ScenarioKind::canonical_nlep: {
            if (get_double_list(d, "sweep.alphas").empty()) throw ConfigError("sweep.alphas is empty");
            for (double r : get_double_list(d, "sweep.r_values"))
                if (!(r >= 1.0)) throw ConfigError("sweep.r_values must be >= 1");
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Registry of built-in scenarios

namespace detail {

inline Scenario make_builtin(const std::string& name, ScenarioKind kind,
                             std::initializer_list<std::pair<const char*, const char*>> kv) {
    Scenario s;
    s.name = name;
    s.kind = kind;
    s.doc.put("scenario.name", name);
    s.doc.put("scenario.kind", to_string(kind));
    for (const auto& [k, v] : kv) s.doc.put(k, v);
    s.output_dir = "out/" + name;
    s.doc.put("output.dir", s.output_dir);
    return s;
}

}  // namespace detail

inline std::vector<Scenario> builtin_scenarios() {
    using K = ScenarioKind;
    using detail::make_builtin;
    return {
        make_builtin("fig1b", K::simulate,
                     {{"model.a", "1"}, {"model.b", "1"}, {"model.theta", "0.5"},
                      {"model.epsilon", "0.01"}, {"model.tau", "2.7"}, {"grid.n", "3200"},
                      {"time.dt", "0.01"}, {"time.t_end", "1500"}, {"time.track_every", "10"},
                      {"initial.type", "steady"}, {"initial.perturbation", "0.01"},
                      {"analysis.window_start", "900"}, {"analysis.window_end", "1500"},
                      {"check.oscillation", "sustained"}}),
        make_builtin("fig1c", K::simulate,
                     {{"model.a", "1"}, {"model.b", "1"}, {"model.theta", "0.5"},
                      {"model.epsilon", "0.01"}, {"model.tau", "0.1"}, {"grid.n", "3200"},
                      {"time.dt", "0.01"}, {"time.t_end", "1000000"}, {"time.scheme", "bdf2"},
                      {"time.adaptive", "true"}, {"time.rtol", "1e-5"},
                      {"initial.type", "gaussian"}, {"initial.x0", "0.4"},
                      {"initial.width", "0.02"}, {"initial.mass", "0.1"},
                      {"check.x0_monotone", "true"}}),
        make_builtin("fig2", K::steady_sweep,
                     {{"model.a", "1"}, {"model.b", "1"},
                      {"sweep.S_values", "0.02,0.05,0.1,0.2,0.3,0.5"},
                      {"sweep.thetas", "0.25,0.5,0.75"}, {"sweep.profiles_theta", "0.5"},
                      {"check.xi_decreasing_in_S", "true"}}),
        make_builtin("fig3", K::steady_sweep,
                     {{"model.a", "1"}, {"model.b", "0.25"},
                      {"sweep.epsilons", "0.02,0.01,0.005,0.0025,0.00125"},
                      {"sweep.thetas", "0.5"}, {"grid.n_per_epsilon", "32"},
                      {"check.monotone_eps", "true"}}),
        make_builtin("fig4", K::steady_sweep,
                     {{"model.a", "1"}, {"model.b", "1"}, {"sweep.epsilons", "0.0025"},
                      {"sweep.thetas", "0.1,0.2,0.3,0.4,0.5,0.6,0.7"},
                      {"grid.n_per_epsilon", "32"}, {"check.monotone_theta", "true"}}),
        make_builtin("fig5", K::hopf_sweep,
                     {{"model.a", "1"}, {"model.b", "1"}, {"sweep.epsilons", "0.0025"},
                      {"sweep.thetas", "0.5"}, {"sweep.methods", "pde_bisect,discretized,nlep"},
                      {"sweep.tau_lo", "1.3"}, {"sweep.tau_hi", "1.6"},
                      {"sweep.nlep_tau_lo", "0.5"}, {"sweep.nlep_tau_hi", "3"},
                      {"grid.n_per_epsilon", "20"}, {"check.tau_h_min", "1.43"},
                      {"check.tau_h_max", "1.44"}, {"check.nlep_rel_tol", "0.15"}}),
        make_builtin("fig6", K::hopf_sweep,
                     {{"model.a", "1"}, {"model.b", "1"},
                      {"sweep.epsilons", "0.01,0.005,0.0025"},
                      {"sweep.thetas", "0.1,0.2,0.3,0.4,0.5,0.6,0.7"},
                      {"sweep.methods", "nlep,discretized"}, {"sweep.tau_lo", "0.1"},
                      {"sweep.tau_hi", "12"}, {"sweep.nlep_tau_lo", "0.1"},
                      {"sweep.nlep_tau_hi", "12"}, {"grid.n_per_epsilon", "20"},
                      {"scenario.workers", "1"}}),
        make_builtin("fig7", K::drift_compare,
                     {{"model.a", "1"}, {"model.b", "0.25"}, {"model.theta", "0.5"},
                      {"model.epsilon", "0.005"}, {"model.tau", "0.1"}, {"grid.n", "6400"},
                      {"drift.x0_init", "0.5"}, {"drift.t_end", "4000000"},
                      {"drift.samples", "81"}, {"analysis.decay_from", "0.375"},
                      {"check.max_x0_diff", "0.05"}, {"check.rate_rel_tol", "0.2"}}),
        make_builtin("appendixA", K::canonical_nlep,
                     {{"sweep.alphas", "0,0.25,0.5,0.75,1,1.5,2,3"}, {"sweep.r_values", "1,2"},
                      {"check.lambda0", "0.25"}, {"check.lambda0_tol", "1e-4"},
                      {"check.positive_at", "0.5"}, {"check.none_positive_at", "2"}}),
    };
}

inline std::optional<Scenario> find_builtin(const std::string& name) {
    for (auto& s : builtin_scenarios())
        if (s.name == name) return s;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Execution

struct RunOptions {
    std::string output_dir;  // overrides [output] dir when set
    bool check = false;
    int workers = 0;         // 0: from the scenario document
};

struct RunOutcome {
    nlohmann::json manifest;
    bool checks_passed = true;
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

/// Writes CSV files and remembers them for the manifest (or for cleanup).
class ArtifactWriter {
public:
    ArtifactWriter(std::filesystem::path dir, std::string prefix)
        : dir_(std::move(dir)), prefix_(std::move(prefix)) {
        std::filesystem::create_directories(dir_);
    }

    std::filesystem::path path_for(const std::string& name) const { return dir_ / (prefix_ + name); }

    void write(const std::string& name, const std::string& body) {
        std::lock_guard lock(mutex_);
        const auto p = path_for(name);
        std::ofstream out(p, std::ios::binary);
        if (!out) throw Error("cannot write " + p.string());
        out << body;
        files_.push_back(p);
    }

    /// Registers a file produced by a module writer.
    void adopt(const std::filesystem::path& p) {
        std::lock_guard lock(mutex_);
        files_.push_back(p);
    }

    nlohmann::json listing() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : files_) {
            std::ifstream in(p, std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            boost::crc_32_type crc;
            crc.process_bytes(bytes.data(), bytes.size());
            std::ostringstream hex;
            hex << std::hex << std::setw(8) << std::setfill('0') << crc.checksum();
            arr.push_back({{"path", p.filename().string()}, {"bytes", bytes.size()}, {"crc32", hex.str()}});
        }
        return arr;
    }

    void remove_all() {
        for (const auto& p : files_) std::filesystem::remove(p);
        files_.clear();
    }

private:
    std::filesystem::path dir_;
    std::string prefix_;
    std::vector<std::filesystem::path> files_;
    std::mutex mutex_;
};

/// Runs job(i) for i in [0, n) on up to `workers` threads; results keep index order.
template <typename Job>
void parallel_for(std::size_t n, int workers, Job&& job) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex fail_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next++;
            if (i >= n) return;
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(fail_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (w == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < w; ++k) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
}

struct Check {
    std::string name;
    bool passed;
    std::string detail;
};

inline nlohmann::json checks_json(const std::vector<Check>& checks) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : checks) arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return arr;
}

inline std::string param_header() { return "epsilon,a,b,theta,tau"; }
inline std::string param_prefix(const ModelParams& p) {
    return fmt(p.epsilon) + ',' + fmt(p.a) + ',' + fmt(p.b) + ',' + fmt(p.theta) + ',' + fmt(p.tau);
}

inline pde::SimConfig sim_config_from(const Document& d) {
    pde::SimConfig c;
    c.params = model_from(d);
    c.grid = make_grid(static_cast<std::size_t>(get_double(d, "grid.n")), c.params.epsilon);
    c.dt = get_double(d, "time.dt");
    c.t_end = get_double(d, "time.t_end");
    c.save_every = static_cast<int>(get_double(d, "time.save_every", 0.0));
    c.track_every = static_cast<int>(get_double(d, "time.track_every", 1.0));
    c.stepper.scheme = pde::scheme_from_string(get_string(d, "time.scheme", "sbdf2"));
    c.stepper.adaptive = get_bool(d, "time.adaptive", false);
    c.stepper.rtol = get_double(d, "time.rtol", c.stepper.rtol);
    c.stepper.atol = get_double(d, "time.atol", c.stepper.atol);
    using Kind = pde::InitialCondition::Kind;
    const std::string type = get_string(d, "initial.type", "steady");
    c.initial.kind = type == "steady"        ? Kind::steady
                     : type == "gaussian"    ? Kind::gaussian
                     : type == "homogeneous" ? Kind::homogeneous
                                             : Kind::from_file;
    c.initial.x0 = get_double(d, "initial.x0", 0.0);
    c.initial.width = get_double(d, "initial.width", c.initial.width);
    c.initial.mass = get_double(d, "initial.mass", c.initial.mass);
    c.initial.l0 = get_double(d, "initial.l0", c.params.a);
    c.initial.k0 = get_double(d, "initial.k0", c.params.a);
    c.initial.perturbation = get_double(d, "initial.perturbation", 0.0);
    c.initial.path = get_string(d, "initial.path", "");
    return c;
}

inline std::string track_csv(const pde::Trajectory& tr, const ModelParams& p) {
    std::ostringstream os;
    os << param_header() << ",t,x0,height_k,height_l,S_estimate\n";
    const std::string pre = param_prefix(p);
    for (const auto& o : tr.spike_track)
        os << pre << ',' << fmt(o.t) << ',' << fmt(o.x0) << ',' << fmt(o.height_k) << ','
           << fmt(o.height_l) << ',' << fmt(o.S_estimate) << '\n';
    return os.str();
}

inline std::string snapshot_csv(const FieldPair& u, const Grid& g, const ModelParams& p, double t) {
    std::ostringstream os;
    os << param_header() << ",t,x,l,k\n";
    const std::string pre = param_prefix(p) + ',' + fmt(t);
    for (std::size_t i = 0; i < g.n; ++i)
        os << pre << ',' << fmt(g.x[i]) << ',' << fmt(u.l[i]) << ',' << fmt(u.k[i]) << '\n';
    return os.str();
}

// -- simulate ---------------------------------------------------------------

inline nlohmann::json run_simulate(const Scenario& s, ArtifactWriter& out, std::vector<Check>& checks) {
    const Document& d = s.doc;
    const pde::SimConfig c = sim_config_from(d);
    const pde::Trajectory tr = pde::run(c);
    out.write("track.csv", track_csv(tr, c.params));
    for (std::size_t k = 0; k < tr.snapshots.size(); ++k) {
        std::ostringstream name;
        name << "snapshot_" << std::setw(5) << std::setfill('0') << k << ".csv";
        out.write(name.str(), snapshot_csv(tr.snapshots[k], c.grid, c.params, tr.times[k]));
    }
    nlohmann::json summary;
    summary["steps"] = tr.spike_track.size();
    summary["rejected_steps"] = tr.rejected_steps;
    const auto& last = tr.spike_track.back();
    summary["final_x0"] = last.x0;
    summary["final_height_k"] = last.height_k;

    const double w0 = get_double(d, "analysis.window_start", 0.5 * c.t_end);
    const double w1 = get_double(d, "analysis.window_end", c.t_end);
    std::optional<pde::OscillationResult> osc;
    try {
        osc = pde::measure_oscillation(tr, w0, w1);
        summary["oscillation"] = {{"classification", pde::to_string(osc->classification)},
                                  {"amplitude", osc->amplitude},
                                  {"period", osc->period},
                                  {"log_slope", osc->log_slope}};
    } catch (const InsufficientExtremaError&) {
        summary["oscillation"] = "none";
    }
    if (has(d, "check.oscillation")) {
        const std::string want = get_string(d, "check.oscillation", "");
        const std::string got = osc ? pde::to_string(osc->classification) : "none";
        checks.push_back({"oscillation", got == want, "classified " + got + ", expected " + want});
    }
    if (get_bool(d, "check.x0_monotone", false)) {
        bool mono = true;
        const double tol = 0.5 * c.grid.dx;
        double best = std::abs(tr.spike_track.front().x0);
        for (const auto& o : tr.spike_track) {
            if (std::abs(o.x0) > best + tol) mono = false;
            best = std::min(best, std::abs(o.x0));
        }
        const bool closer = std::abs(last.x0) < std::abs(tr.spike_track.front().x0);
        checks.push_back({"x0_monotone", mono && closer,
                          "|x0| from " + fmt(std::abs(tr.spike_track.front().x0)) + " to " +
                              fmt(std::abs(last.x0))});
    }
    return summary;
}

// -- steady_sweep -----------------------------------------------------------

inline bool strictly_decreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] < v[i - 1])) return false;
    return true;
}

inline nlohmann::json run_core_table(const Scenario& s, ArtifactWriter& out,
                                     std::vector<Check>& checks, int workers) {
    const Document& d = s.doc;
    const double a = get_double(d, "model.a");
    const double b = get_double(d, "model.b");
    const auto Ss = get_double_list(d, "sweep.S_values");
    const auto thetas = get_double_list(d, "sweep.thetas");
    struct Row {
        double S, theta, xi, I, residual;
    };
    std::vector<Row> rows(Ss.size() * thetas.size());
    parallel_for(rows.size(), workers, [&](std::size_t i) {
        const double S = Ss[i % Ss.size()], th = thetas[i / Ss.size()];
        const auto p = inner::solve_inner(S, th);
        rows[i] = {S, th, p.xi, inner::compute_I(p, a, b), inner::first_integral_residual(p)};
    });
    std::ostringstream os;
    os << "a,b,theta,S,xi,I,first_integral_residual\n";
    for (const auto& r : rows)
        os << fmt(a) << ',' << fmt(b) << ',' << fmt(r.theta) << ',' << fmt(r.S) << ',' << fmt(r.xi)
           << ',' << fmt(r.I) << ',' << fmt(r.residual) << '\n';
    out.write("core_table.csv", os.str());

    if (has(d, "sweep.profiles_theta")) {
        const double th = get_double(d, "sweep.profiles_theta");
        std::ostringstream ps;
        ps << "theta,S,y,K0,L0\n";
        for (double S : Ss) {
            const auto p = inner::solve_inner(S, th);
            const std::size_t stride = std::max<std::size_t>(1, p.size() / 400);
            for (std::size_t i = 0; i < p.size(); i += stride)
                ps << fmt(th) << ',' << fmt(S) << ',' << fmt(p.y[i]) << ',' << fmt(p.K0[i]) << ','
                   << fmt(p.L0[i]) << '\n';
        }
        out.write("core_profiles.csv", ps.str());
    }
    if (get_bool(d, "check.xi_decreasing_in_S", false)) {
        bool ok = true;
        for (double th : thetas) {
            std::vector<std::pair<double, double>> v;
            for (const auto& r : rows)
                if (r.theta == th) v.emplace_back(r.S, r.xi);
            std::sort(v.begin(), v.end());
            std::vector<double> xs;
            for (auto& [S, xi] : v) xs.push_back(xi);
            ok = ok && strictly_decreasing(xs);
        }
        checks.push_back({"xi_decreasing_in_S", ok, "core height grows as S decreases"});
    }
    return {{"rows", rows.size()}};
}

inline nlohmann::json run_matching_table(const Scenario& s, ArtifactWriter& out,
                                         std::vector<Check>& checks, int workers) {
    const Document& d = s.doc;
    const double a = get_double(d, "model.a");
    const double b = get_double(d, "model.b");
    const auto eps = get_double_list(d, "sweep.epsilons");
    const auto thetas = get_double_list(d, "sweep.thetas");
    const double npe = get_double(d, "grid.n_per_epsilon", 32.0);
    struct Row {
        double eps, theta, S_pde, S_match, S_sub, xi_pde, xi_match, xi_sub;
    };
    std::vector<Row> rows(eps.size() * thetas.size());
    parallel_for(rows.size(), workers, [&](std::size_t i) {
        const double e = eps[i % eps.size()], th = thetas[i / eps.size()];
        const ModelParams p = make_model_params(a, b, th, e, 1.0);
        const Grid g = make_grid(static_cast<std::size_t>(std::llround(npe / e)), e);
        const auto m = steady::match_amplitude(e, a, b, th);
        const auto sub = inner::subinner_asymptotics(e, a, b, th);
        const FieldPair u = stability::discrete_steady_state(p, g);
        const auto obs = pde::detect_spike(u, g);
        const double S_pde = pde::outer_amplitude_from_midpoint(obs.S_estimate, 0.0, a, b);
        rows[i] = {e, th, S_pde, m.S, sub.S, obs.height_k, m.profile.xi, sub.xi};
    });
    std::ostringstream os;
    os << "epsilon,a,b,theta,S_pde,S_match,S_subinner,xi_pde,xi_match,xi_subinner,"
          "rel_pde_match,rel_match_subinner\n";
    for (const auto& r : rows)
        os << fmt(r.eps) << ',' << fmt(a) << ',' << fmt(b) << ',' << fmt(r.theta) << ','
           << fmt(r.S_pde) << ',' << fmt(r.S_match) << ',' << fmt(r.S_sub) << ',' << fmt(r.xi_pde)
           << ',' << fmt(r.xi_match) << ',' << fmt(r.xi_sub) << ','
           << fmt(std::abs(r.S_pde - r.S_match) / r.S_pde) << ','
           << fmt(std::abs(r.S_match - r.S_sub) / r.S_match) << '\n';
    out.write("steady_table.csv", os.str());

    if (get_bool(d, "check.monotone_eps", false)) {
        bool ok = true;
        for (double th : thetas) {
            std::vector<Row> v;
            for (const auto& r : rows)
                if (r.theta == th) v.push_back(r);
            std::sort(v.begin(), v.end(), [](const Row& x, const Row& y) { return x.eps > y.eps; });
            std::vector<double> d1, d2;
            for (const auto& r : v) {
                d1.push_back(std::abs(r.S_pde - r.S_match) / r.S_pde);
                d2.push_back(std::abs(r.S_match - r.S_sub) / r.S_match);
            }
            ok = ok && strictly_decreasing(d1) && strictly_decreasing(d2);
        }
        checks.push_back({"monotone_eps", ok, "both S discrepancies shrink as epsilon decreases"});
    }
    if (get_bool(d, "check.monotone_theta", false)) {
        bool ok = true;
        for (double e : eps) {
            std::vector<Row> v;
            for (const auto& r : rows)
                if (r.eps == e) v.push_back(r);
            std::sort(v.begin(), v.end(), [](const Row& x, const Row& y) { return x.theta > y.theta; });
            std::vector<double> d2;
            for (const auto& r : v) d2.push_back(std::abs(r.S_match - r.S_sub) / r.S_match);
            ok = ok && strictly_decreasing(d2);
        }
        checks.push_back({"monotone_theta", ok, "match/sub-inner discrepancy grows with theta"});
    }
    return {{"rows", rows.size()}};
}

// -- hopf_sweep -------------------------------------------------------------

inline nlohmann::json run_hopf(const Scenario& s, ArtifactWriter& out, std::vector<Check>& checks,
                               int workers) {
    const Document& d = s.doc;
    const double a = get_double(d, "model.a");
    const double b = get_double(d, "model.b");
    const auto eps = get_double_list(d, "sweep.epsilons");
    const auto thetas = get_double_list(d, "sweep.thetas");
    std::vector<stability::HopfMethod> methods;
    for (const auto& m : get_list(d, "sweep.methods")) methods.push_back(stability::hopf_method_from_string(m));
    const double npe = get_double(d, "grid.n_per_epsilon", 20.0);

    struct Point {
        double eps, theta;
        std::map<stability::HopfMethod, stability::HopfResult> res;
        std::map<stability::HopfMethod, std::string> failure;
    };
    std::vector<Point> pts(eps.size() * thetas.size());
    parallel_for(pts.size(), workers, [&](std::size_t i) {
        Point& pt = pts[i];
        pt.eps = eps[i % eps.size()];
        pt.theta = thetas[i / eps.size()];
        for (auto m : methods) {
            stability::HopfOptions o;
            o.tol = get_double(d, "sweep.tol", 1e-3);
            o.nlep.keep_S2 = get_bool(d, "sweep.keep_S2", false);
            o.n = static_cast<std::size_t>(std::llround(npe / pt.eps));
            const bool nl = m == stability::HopfMethod::nlep;
            o.tau_lo = get_double(d, nl ? "sweep.nlep_tau_lo" : "sweep.tau_lo", 0.5);
            o.tau_hi = get_double(d, nl ? "sweep.nlep_tau_hi" : "sweep.tau_hi", 3.0);
            try {
                pt.res[m] = stability::find_hopf_tau(pt.eps, a, b, pt.theta, m, o);
            } catch (const NoConvergenceError& e) {
                pt.failure[m] = e.what();
                warn(std::string(to_string(m)) + ": " + e.what());
            }
        }
    });

    std::vector<stability::HopfTableRow> table;
    std::ostringstream samples;
    samples << "epsilon,a,b,theta,method,tau,growth,re_lambda,im_lambda\n";
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& pt : pts) {
        stability::HopfTableRow row{pt.eps, pt.theta, a, b, {}, {}, {}};
        nlohmann::json js = {{"epsilon", pt.eps}, {"theta", pt.theta}};
        for (const auto& [m, r] : pt.res) {
            if (m == stability::HopfMethod::nlep) row.tau_h_nlep = r.tau_h;
            if (m == stability::HopfMethod::discretized) row.tau_h_discretized = r.tau_h;
            if (m == stability::HopfMethod::pde_bisect) row.tau_h_pde = r.tau_h;
            js[to_string(m)] = {{"tau_h", r.tau_h}, {"tau_stable", r.tau_stable}, {"tau_unstable", r.tau_unstable}};
            auto sorted = r.samples;
            std::sort(sorted.begin(), sorted.end(), [](auto& x, auto& y) { return x.tau < y.tau; });
            for (const auto& sm : sorted)
                samples << fmt(pt.eps) << ',' << fmt(a) << ',' << fmt(b) << ',' << fmt(pt.theta) << ','
                        << to_string(m) << ',' << fmt(sm.tau) << ',' << fmt(sm.growth) << ','
                        << fmt(sm.lambda.real()) << ',' << fmt(sm.lambda.imag()) << '\n';
        }
        for (const auto& [m, msg] : pt.failure) js[to_string(m)] = {{"failure", msg}};
        table.push_back(row);
        summary.push_back(js);
    }
    const auto table_path = out.path_for("hopf_table.csv");
    stability::write_hopf_table_csv(table, table_path.string());
    out.adopt(table_path);
    out.write("hopf_samples.csv", samples.str());

    if (has(d, "check.tau_h_min") || has(d, "check.nlep_rel_tol")) {
        for (const auto& row : table) {
            const auto ref = row.tau_h_pde ? row.tau_h_pde : row.tau_h_discretized;
            if (has(d, "check.tau_h_min")) {
                const double lo = get_double(d, "check.tau_h_min"), hi = get_double(d, "check.tau_h_max");
                checks.push_back({"tau_h_bracket", ref && *ref > lo && *ref < hi,
                                  ref ? "tau_h=" + fmt(*ref) + " vs (" + fmt(lo) + ", " + fmt(hi) + ")"
                                      : "no reference threshold"});
            }
            if (has(d, "check.nlep_rel_tol")) {
                const double tol = get_double(d, "check.nlep_rel_tol");
                const bool ok = ref && row.tau_h_nlep && std::abs(*row.tau_h_nlep - *ref) / *ref <= tol;
                checks.push_back({"nlep_agreement", ok,
                                  ref && row.tau_h_nlep
                                      ? "nlep " + fmt(*row.tau_h_nlep) + " vs " + fmt(*ref)
                                      : "missing threshold"});
            }
        }
    }
    return summary;
}

// -- drift_compare ----------------------------------------------------------

inline nlohmann::json run_drift(const Scenario& s, ArtifactWriter& out, std::vector<Check>& checks) {
    const Document& d = s.doc;
    const ModelParams p = model_from(d);
    const double x0 = get_double(d, "drift.x0_init");
    const double t_end = get_double(d, "drift.t_end");
    const auto samples = static_cast<std::size_t>(get_double(d, "drift.samples", 81.0));
    slowdyn::DriftOptions dopt;
    dopt.reading = get_string(d, "drift.reading", "fast_time") == "fast_time"
                       ? slowdyn::TimeReading::fast_time
                       : slowdyn::TimeReading::slow_time_literal;
    const auto dae = slowdyn::integrate_drift(x0, t_end, p.epsilon, p.a, p.b, p.theta, dopt, samples);
    if (!dae.completed) throw NoConvergenceError("drift integration aborted: " + dae.failure);

    pde::SimConfig c;
    c.params = p;
    c.grid = make_grid(static_cast<std::size_t>(get_double(d, "grid.n", std::llround(32.0 / p.epsilon))), p.epsilon);
    c.dt = 1e-2;
    c.t_end = t_end;
    c.initial.kind = pde::InitialCondition::Kind::steady;
    c.initial.x0 = x0;
    c.stepper.scheme = pde::TimeScheme::bdf2;
    c.stepper.adaptive = true;
    c.stepper.rtol = 1e-5;
    const auto tr = pde::run(c);

    std::ostringstream dc;
    dc << param_header() << ",t,x0,S0,velocity\n";
    for (std::size_t i = 0; i < dae.t.size(); ++i)
        dc << param_prefix(p) << ',' << fmt(dae.t[i]) << ',' << fmt(dae.x0[i]) << ','
           << fmt(dae.S0[i]) << ',' << fmt(dae.velocity[i]) << '\n';
    out.write("drift.csv", dc.str());
    out.write("pde_track.csv", track_csv(tr, p));
    std::ostringstream cmp;
    cmp << param_header() << ",t,x0_dae,S0_dae,t_pde,x0_pde\n";
    double max_diff = 0.0;
    for (std::size_t i = 0; i < dae.t.size(); ++i) {
        const auto& o = slowdyn::nearest_observation(tr.spike_track, dae.t[i]);
        max_diff = std::max(max_diff, std::abs(o.x0 - dae.x0[i]));
        cmp << param_prefix(p) << ',' << fmt(dae.t[i]) << ',' << fmt(dae.x0[i]) << ','
            << fmt(dae.S0[i]) << ',' << fmt(o.t) << ',' << fmt(o.x0) << '\n';
    }
    out.write("drift_comparison.csv", cmp.str());

    const double from = get_double(d, "analysis.decay_from", 0.375) * t_end;
    std::vector<double> tp, xp;
    for (const auto& o : tr.spike_track) {
        tp.push_back(o.t);
        xp.push_back(o.x0);
    }
    const double rate_pde = slowdyn::log_decay_rate(tp, xp, from);
    const double rate_dae = slowdyn::log_decay_rate(dae.t, dae.x0, from);
    const double lam = stability::small_eigenvalue(p.epsilon, p.a, p.b, p.theta);
    if (has(d, "check.max_x0_diff")) {
        const double tol = get_double(d, "check.max_x0_diff");
        checks.push_back({"max_x0_diff", max_diff <= tol, "max |dx0| = " + fmt(max_diff)});
    }
    if (has(d, "check.rate_rel_tol")) {
        const double tol = get_double(d, "check.rate_rel_tol");
        const double rel = std::abs(rate_pde - rate_dae) / std::abs(rate_dae);
        checks.push_back({"decay_rate", rel <= tol, "pde " + fmt(rate_pde) + " vs dae " + fmt(rate_dae)});
    }
    return {{"max_x0_diff", max_diff},
            {"decay_rate_pde", rate_pde},
            {"decay_rate_dae", rate_dae},
            {"lambda_small", lam}};
}

// -- nlep_trace -------------------------------------------------------------

inline nlohmann::json run_nlep_trace(const Scenario& s, ArtifactWriter& out, std::vector<Check>& checks) {
    const Document& d = s.doc;
    const double a = get_double(d, "model.a"), b = get_double(d, "model.b");
    const double eps = get_double(d, "model.epsilon");
    const double tau = get_double(d, "sweep.tau", 0.0);
    const double lo = get_double(d, "sweep.lambda_min", 0.0), hi = get_double(d, "sweep.lambda_max", 2.0);
    const auto n = static_cast<std::size_t>(get_double(d, "sweep.samples", 401.0));
    nlohmann::json summary = nlohmann::json::array();
    bool none_positive = true;
    std::ostringstream os;
    os << "epsilon,a,b,theta,tau,re_lambda,im_lambda,re_f,im_f\n";
    for (double th : get_double_list(d, "sweep.thetas")) {
        const auto ctx = stability::make_nlep_context(eps, a, b, th);
        for (std::size_t k = 0; k < n; ++k) {
            const double l = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
            const auto f = stability::nlep_secular(stability::cplx(l, 0.0), ctx, tau);
            os << fmt(eps) << ',' << fmt(a) << ',' << fmt(b) << ',' << fmt(th) << ',' << fmt(tau)
               << ',' << fmt(l) << ",0," << fmt(f.real()) << ',' << fmt(f.imag()) << '\n';
        }
        const auto roots = stability::real_secular_roots(ctx, tau, lo, hi, n);
        std::size_t positive = 0;
        for (double r : roots) positive += r > 0.0;
        none_positive = none_positive && positive == 0;
        summary.push_back({{"theta", th}, {"S", ctx.S}, {"real_roots", roots}});
    }
    out.write("secular_trace.csv", os.str());
    if (get_bool(d, "check.no_positive_real_root", false))
        checks.push_back({"no_positive_real_root", none_positive, "real sweep of f"});
    return summary;
}

// -- canonical_nlep ---------------------------------------------------------

inline nlohmann::json run_canonical(const Scenario& s, ArtifactWriter& out, std::vector<Check>& checks,
                                    int workers) {
    const Document& d = s.doc;
    const auto alphas = get_double_list(d, "sweep.alphas");
    auto rs = get_double_list(d, "sweep.r_values");
    if (rs.empty()) rs = {1.0};
    std::vector<stability::cplx> lead(alphas.size() * rs.size());
    parallel_for(lead.size(), workers, [&](std::size_t i) {
        lead[i] = stability::canonical_nlep_leading(alphas[i % alphas.size()], rs[i / alphas.size()]);
    });
    std::ostringstream os;
    os << "alpha,r,re_Lambda,im_Lambda\n";
    for (std::size_t i = 0; i < lead.size(); ++i)
        os << fmt(alphas[i % alphas.size()]) << ',' << fmt(rs[i / alphas.size()]) << ','
           << fmt(lead[i].real()) << ',' << fmt(lead[i].imag()) << '\n';
    out.write("canonical_nlep.csv", os.str());
    auto at = [&](double alpha, double r) -> std::optional<stability::cplx> {
        for (std::size_t i = 0; i < lead.size(); ++i)
            if (alphas[i % alphas.size()] == alpha && rs[i / alphas.size()] == r) return lead[i];
        return std::nullopt;
    };
    if (has(d, "check.lambda0")) {
        const auto v = at(0.0, 1.0);
        const double want = get_double(d, "check.lambda0"), tol = get_double(d, "check.lambda0_tol", 1e-4);
        checks.push_back({"lambda0", v && std::abs(*v - want) <= tol,
                          v ? "Lambda(0)=" + fmt(v->real()) : "alpha=0, r=1 not in sweep"});
    }
    if (has(d, "check.positive_at")) {
        const auto v = at(get_double(d, "check.positive_at"), 1.0);
        checks.push_back({"positive_at", v && v->real() > 0.0, v ? "Re=" + fmt(v->real()) : "missing"});
    }
    if (has(d, "check.none_positive_at")) {
        const auto v = at(get_double(d, "check.none_positive_at"), 1.0);
        checks.push_back({"none_positive_at", v && v->real() <= 0.0, v ? "Re=" + fmt(v->real()) : "missing"});
    }
    return {{"cases", lead.size()}};
}

}  // namespace detail

/// Executes the scenario and writes artifacts plus manifest.json. Solver
/// failures remove the partial artifacts and propagate.
inline RunOutcome run_scenario(const Scenario& s, const RunOptions& ro = {}) {
    validate(s);
    const std::string dir = !ro.output_dir.empty() ? ro.output_dir
                            : !s.output_dir.empty() ? s.output_dir
                                                    : "out/" + s.name;
    const int workers = ro.workers > 0 ? ro.workers
                                       : static_cast<int>(get_double(s.doc, "scenario.workers", 1.0));
    detail::ArtifactWriter out(dir, get_string(s.doc, "output.prefix", ""));
    std::vector<detail::Check> checks;
    std::vector<std::string> warnings;
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::json summary;
    {
        std::mutex wm;
        const WarningSink prev = set_warning_sink([&](const std::string& m) {
            std::lock_guard lock(wm);
            warnings.push_back(m);
        });
        try {
            switch (s.kind) {
                case ScenarioKind::simulate: summary = detail::run_simulate(s, out, checks); break;
                case ScenarioKind::steady_sweep:
                    summary = has(s.doc, "sweep.S_values") ? detail::run_core_table(s, out, checks, workers)
                                                           : detail::run_matching_table(s, out, checks, workers);
                    break;
                case ScenarioKind::hopf_sweep: summary = detail::run_hopf(s, out, checks, workers); break;
                case ScenarioKind::drift_compare: summary = detail::run_drift(s, out, checks); break;
                case ScenarioKind::nlep_trace: summary = detail::run_nlep_trace(s, out, checks); break;
                case ScenarioKind::canonical_nlep: summary = detail::run_canonical(s, out, checks, workers); break;
            }
        } catch (...) {
            set_warning_sink(prev);
            out.remove_all();
            throw;
        }
        set_warning_sink(prev);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RunOutcome res;
    for (const auto& c : checks) res.checks_passed = res.checks_passed && c.passed;
    res.manifest = {{"scenario", s.name},
                    {"kind", to_string(s.kind)},
                    {"version", kVersion},
                    {"inputs", serialize(s)},
                    {"wall_time_seconds", wall},
                    {"workers", workers},
                    {"summary", summary},
                    {"warnings", warnings},
                    {"checks", detail::checks_json(checks)},
                    {"artifacts", out.listing()}};
    std::ofstream mf(std::filesystem::path(dir) / (get_string(s.doc, "output.prefix", "") + "manifest.json"));
    mf << res.manifest.dump(2) << '\n';
    return res;
}

}  // namespace spikelab::cli
