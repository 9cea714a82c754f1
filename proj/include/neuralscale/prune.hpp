#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "neuralscale/arch.hpp"
#include "neuralscale/dataset.hpp"
#include "neuralscale/network.hpp"
#include "neuralscale/trainer.hpp"

namespace neuralscale {

struct PruneConfig {
    int pretrain_epochs = 10;  // P
    double pretrain_lr = 0.1;
    double lr_decay = 0.1;     // applied every decay_every epochs of pre-training
    int decay_every = 10;
    // Rate for the train-between-prunes phase. Unset: the pre-training
    // schedule continued past epoch P (0.01 for the defaults).
    std::optional<double> prune_lr;
    double momentum = 0.5;
    double weight_decay = 5e-4;
    int batch_size = 64;
    int q = 30;                       // iterations between prune steps
    int k_absolute = 0;               // gates per prune step; 0 means use k_fraction
    double k_fraction = 0.02;         // of the initial gate count
    double eps_fraction = 0.05;       // stop once alive gates drop below this share
    std::uint64_t seed = 1;

    void validate() const;
    int resolve_k(int initial_gates) const;
    double prune_phase_lr() const;
};

struct TrajectoryRecord {
    int step = 0;           // prune step after which the record was taken
    std::int64_t tau = 0;   // count_params of phi
    WidthConfig phi;
    bool operator==(const TrajectoryRecord&) const = default;
};

struct PruneTrajectory {
    std::string arch_name;
    int num_layers = 0;  // L
    std::uint64_t seed = 0;
    PruneConfig config;
    std::vector<TrajectoryRecord> records;
};

// Importance per layer and channel. Dead channels hold -infinity.
using GateScores = std::vector<std::vector<double>>;

// Trains for q iterations from `stream` while averaging (dE/dz)^2 per gate.
// `step` is the running iteration counter used in divergence reports.
GateScores gate_importance(Network& net, BatchStream& stream, int q, const SgdSettings& sgd, long long& step);

struct PruneStepResult {
    std::vector<std::pair<int, int>> removed;  // (layer, channel)
    bool stop = false;                          // fewer than k removable gates; nothing removed
};

// Masks the k lowest-scoring alive prunable gates, never emptying a layer.
// Derived layers (expansion, depthwise) are shrunk to follow their inputs.
PruneStepResult prune_step(Network& net, const GateScores& scores, int k);

// Number of prunable gates that can still be removed (alive minus one per layer).
int removable_gates(const Network& net);

struct PruneRun {
    PruneTrajectory trajectory;
    Network network;           // final pruned network
    int initial_gates = 0;
    int steps = 0;
    std::vector<WidthConfig> widths_after_step;  // alive widths after every prune step
};

// Pre-train, then alternate {q iterations of training with importance
// accumulation, prune_step} until alive gates < eps_fraction * initial.
// With `target_alive`, pruning instead halts at exactly that many alive
// gates and the eps stop is ignored.
PruneRun run_pruning(const ArchSpec& arch, const WidthConfig& widths, const Dataset& data, const PruneConfig& cfg,
                     std::optional<int> target_alive = std::nullopt);

// Throws EmptyTrajectory when no record was taken before the stop.
PruneTrajectory iterative_prune(const ArchSpec& arch, const WidthConfig& widths, const Dataset& data,
                                const PruneConfig& cfg);
inline PruneTrajectory iterative_prune(const ArchSpec& arch, const Dataset& data, const PruneConfig& cfg) {
    return iterative_prune(arch, WidthConfig(arch.default_widths()), data, cfg);
}

}  // namespace neuralscale
