#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neuralscale/descent.hpp"
#include "neuralscale/io.hpp"
#include "neuralscale/trainer.hpp"

namespace neuralscale {

enum class Method { Uniform, MorphnetTaylor, NeuralScaleIter1, NeuralScaleIterK };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

struct MorphnetResult {
    int initial_gates = 0;
    int target_alive = 0;  // ceil(initial / 2)
    int alive_gates = 0;   // after pruning, before scaling
    WidthConfig pruned;    // surviving widths
    UniformMatch scaled;   // multiplier applied to `pruned`
};

// Pruned half of the network (global gate count), independent of the budget.
MorphnetResult morphnet_prune(const ArchSpec& arch, const Dataset& data, const PruneConfig& cfg);
// Scales an already pruned result to tau_hat.
MorphnetResult morphnet_scale(MorphnetResult pruned, const ArchSpec& arch, std::int64_t tau_hat);
MorphnetResult morphnet_taylor(const ArchSpec& arch, const Dataset& data, std::int64_t tau_hat, const PruneConfig& cfg);

struct CompareConfig {
    std::vector<std::int64_t> budgets;
    std::vector<Method> methods{Method::Uniform, Method::MorphnetTaylor, Method::NeuralScaleIter1,
                                Method::NeuralScaleIterK};
    int repeats = 5;        // R
    std::uint64_t seed = 1; // repeat r trains with derive_seed(seed, r), shared by every method
    TrainSchedule train;    // the from-scratch schedule; validation is tracked every epoch
    PruneConfig prune;      // used by morphnet-taylor and the descent runs
    DescentConfig descent;  // max_iters is K for neuralscale-iterK
    int threads = 0;        // 0: hardware concurrency
    std::optional<std::filesystem::path> descent_dir;  // keep descent histories per budget

    void validate() const;
};

struct CellResult {
    Method method = Method::Uniform;
    std::int64_t budget = 0;
    bool feasible = true;
    std::string error;
    WidthConfig widths;
    std::int64_t achieved_params = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracies;  // best validation accuracy of each repeat
    double mean = 0.0, min = 0.0, max = 0.0;
};

struct ComparisonReport {
    std::string arch_name;
    int num_layers = 0;
    int repeats = 0;
    std::vector<CellResult> rows;  // ordered by budget, then method
    std::optional<MorphnetResult> morphnet;
    Json config;
};

// mean / min / max of stored accuracies.
void aggregate(CellResult& cell);

ComparisonReport compare(const ArchSpec& arch, const Dataset& data, const CompareConfig& cfg);

Json report_to_json(const ComparisonReport& report);
// Columns: params,mean,min,max,method
std::string report_csv(const ComparisonReport& report);
void write_report(const ComparisonReport& report, const std::filesystem::path& dir);

// Whether neuralscale-iterK's mean is at least the uniform mean at the
// smallest feasible budget. Descriptive only.
Json qualitative_summary(const ComparisonReport& report);

}  // namespace neuralscale
