#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spikelab {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter lies outside the domain where the model or formula is defined.
class ParameterDomainError : public Error {
public:
    using Error::Error;
};

/// An iterative solver exhausted its budget.
class NoConvergenceError : public Error {
public:
    using Error::Error;
};

/// No sign change inside the search interval of a bracketing solver.
class BracketError : public NoConvergenceError {
public:
    using NoConvergenceError::NoConvergenceError;
};

/// The core solver collapsed onto a constant solution.
class DegenerateSolutionError : public Error {
public:
    using Error::Error;
};

/// Spectral parameter hits the spectrum of the local operator.
class ResolventSingularError : public Error {
public:
    using Error::Error;
};

/// A time step could not be completed even after the step size was reduced.
class StepFailureError : public Error {
public:
    StepFailureError(const std::string& what, double t) : Error(what), time_(t) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

class InsufficientExtremaError : public Error {
public:
    using Error::Error;
};

class PositivityError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Warnings go through a process-wide sink so tests and the CLI can capture
// them. The default sink writes to stderr.
using WarningSink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& warning_mutex() {
    static std::mutex m;
    return m;
}
inline WarningSink& warning_sink() {
    static WarningSink sink = [](const std::string& msg) {
        std::cerr << "spikelab warning: " << msg << '\n';
    };
    return sink;
}
}  // namespace detail

inline void warn(const std::string& msg) {
    std::lock_guard lock(detail::warning_mutex());
    if (detail::warning_sink()) detail::warning_sink()(msg);
}

/// Installs a new sink and returns the previous one.
inline WarningSink set_warning_sink(WarningSink sink) {
    std::lock_guard lock(detail::warning_mutex());
    return std::exchange(detail::warning_sink(), std::move(sink));
}

/// RAII capture of warnings, mostly for tests.
class ScopedWarningCapture {
public:
    ScopedWarningCapture()
        : previous_(set_warning_sink([this](const std::string& m) { messages_.push_back(m); })) {}
    ~ScopedWarningCapture() { set_warning_sink(std::move(previous_)); }
    ScopedWarningCapture(const ScopedWarningCapture&) = delete;
    ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

    const std::vector<std::string>& messages() const { return messages_; }
    bool empty() const { return messages_.empty(); }

private:
    std::vector<std::string> messages_;
    WarningSink previous_;
};

}  // namespace spikelab
