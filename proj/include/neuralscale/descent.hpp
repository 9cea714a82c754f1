#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neuralscale/arch.hpp"
#include "neuralscale/dataset.hpp"
#include "neuralscale/fit.hpp"
#include "neuralscale/io.hpp"
#include "neuralscale/prune.hpp"
#include "neuralscale/scale.hpp"

namespace neuralscale {

struct DescentConfig {
    int max_iters = 15;
    double threshold = 0.02;  // convergence_delta bound
    int patience = 2;         // consecutive iterations under the bound
    double budget_tol = 0.01; // every emitted config must land this close to tau_hat
    PruneConfig prune;        // prune.seed is the base seed; iteration i uses base + i
    TauDescentOpts tau;
    // Called after each iteration is on disk; lets tests simulate a crash.
    std::function<void(int)> after_iteration;

    void validate() const;
};

Json descent_config_to_json(const DescentConfig& cfg);

struct DescentIteration {
    int index = 0;
    std::uint64_t seed = 0;
    WidthConfig start;
    PruneTrajectory trajectory;
    ScalingParams params;
    ScaledConfig scaled;
    double delta = 0.0;  // convergence_delta(start, scaled.widths)
};

struct DescentHistory {
    std::int64_t tau_hat = 0;
    WidthConfig initial;  // uniform match used by iteration 0
    std::vector<DescentIteration> iterations;
    bool converged = false;
    int resumed_from = 0;  // iterations loaded from disk rather than recomputed
};

// sum |next - prev| / sum prev.
double convergence_delta(const WidthConfig& prev, const WidthConfig& next);

// Alternate prune -> fit -> rescale at a fixed budget, each round from a
// fresh network. With `out_dir`, every finished iteration is written under
// iter_NNN/ and the top-level manifest is refreshed; an existing directory of
// the same run is resumed from its last complete iteration.
DescentHistory architecture_descent(const ArchSpec& arch, const Dataset& data, std::int64_t tau_hat,
                                    const DescentConfig& cfg,
                                    const std::optional<std::filesystem::path>& out_dir = std::nullopt);

std::string iteration_dir_name(int index);

}  // namespace neuralscale
