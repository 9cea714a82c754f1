#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "neuralscale/arch.hpp"
#include "neuralscale/fit.hpp"

namespace neuralscale {

enum class TauMethod { PaperSgd, ExactSgd, Bisection };

std::string_view to_string(TauMethod m);
TauMethod tau_method_from_string(std::string_view s);

struct TauDescentOpts {
    std::optional<double> eta;  // unset: normalized default for the chosen method
    int max_iters = 200;
    double rel_tol = 0.005;
    TauMethod method = TauMethod::Bisection;

    void validate() const;
};

struct TauTracePoint {
    double tau = 0.0;
    double h = 0.0;
};

struct TauDescentResult {
    double tau_star = 0.0;
    std::vector<TauTracePoint> trace;
    int iterations = 0;
    bool converged = false;
};

struct ScaledConfig {
    WidthConfig widths;
    std::int64_t achieved_params = 0;
    std::int64_t target = 0;
    double tau_star = 0.0;
    int iterations_used = 0;
    int adjusted_layers = 0;  // layers moved off round-to-nearest to meet the tolerance
    bool converged = false;

    double relative_error() const;
};

double init_tau(const ScalingParams& params, std::int64_t tau_hat);

// Unrounded widths alpha_l * tau^beta_l.
std::vector<double> predict_widths(const ScalingParams& params, double tau);

// max(1, round(w)) per layer, half away from zero.
WidthConfig round_widths(std::span<const double> widths);

// h of the real-valued predicted widths.
double continuous_h(const ScalingParams& params, const ArchSpec& arch, double tau);

// h of the rounded, clamped predicted widths.
std::int64_t integer_h(const ScalingParams& params, const ArchSpec& arch, double tau);

// sum_l beta_l alpha_l tau^(beta_l - 1), the update direction as printed.
double paper_direction(const ScalingParams& params, double tau);

// sum_l dh/dphi_l * beta_l alpha_l tau^(beta_l - 1), the full chain rule.
double exact_direction(const ScalingParams& params, const ArchSpec& arch, double tau);

double default_eta(const ScalingParams& params, const ArchSpec& arch, double tau_hat, TauMethod method);

// eta * (h(Phi(tau)) - tau_hat) * direction: the amount subtracted from tau.
double tau_delta(const ScalingParams& params, const ArchSpec& arch, double tau, double tau_hat, double eta,
                 TauMethod method);

// One gradient update of tau against the continuous h. Throws StepSize when the
// result is not a finite positive number.
double tau_update(const ScalingParams& params, const ArchSpec& arch, double tau, double tau_hat, double eta,
                  TauMethod method);

TauDescentResult tau_descent(const ScalingParams& params, const ArchSpec& arch, std::int64_t tau_hat,
                             const TauDescentOpts& opts = {});

ScaledConfig generate_widths(const ScalingParams& params, const ArchSpec& arch, std::int64_t tau_hat,
                             const TauDescentOpts& opts = {});

struct UniformMatch {
    double ratio = 1.0;
    WidthConfig widths;
    std::int64_t params = 0;
};

// max(1, round(base_l * ratio)) per layer.
WidthConfig scale_widths(const WidthConfig& base, double ratio);

// Multiplier on `base` whose rounded config counts closest to tau_hat, found
// by bisection on the ratio. Throws InfeasibleBudget below the all-ones count.
UniformMatch scale_to_budget(const ArchSpec& arch, const WidthConfig& base, std::int64_t tau_hat);

// scale_to_budget on the default widths.
UniformMatch uniform_match(const ArchSpec& arch, std::int64_t tau_hat);

}  // namespace neuralscale
