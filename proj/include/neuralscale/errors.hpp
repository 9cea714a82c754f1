#pragma once

#include <stdexcept>
#include <string>

namespace neuralscale {

enum class ErrorKind {
    Structural,          // shape / length / family mismatches
    Domain,              // out-of-range values
    InsufficientData,
    SingularDesign,
    Numerical,
    StepSize,
    NoBracket,
    TrainingDivergence,
    EmptyTrajectory,
    InfeasibleBudget,
    Parse,
    Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class TrainingDivergence : public Error {
public:
    TrainingDivergence(long long step, const std::string& what)
        : Error(ErrorKind::TrainingDivergence, what), step_(step) {}

    long long step() const noexcept { return step_; }

private:
    long long step_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace neuralscale
