#include "neuralscale/prune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "neuralscale/errors.hpp"
#include "neuralscale/rng.hpp"

namespace neuralscale {

namespace {

constexpr double kDead = -std::numeric_limits<double>::infinity();

// Expansion layers keep expand * (alive inputs) channels, dropping their own
// lowest scorers; depthwise layers mirror the channel mask of their input.
void sync_derived(Network& net, const GateScores& scores) {
    const auto& specs = net.arch.layers;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto& layer = net.layers[i];
        switch (specs[i].width_rule) {
            case WidthRule::Prunable:
                break;
            case WidthRule::SameAsInput:
                if (i == 0) break;
                for (int c = 0; c < layer.out_channels; ++c)
                    if (layer.alive[c] && !net.layers[i - 1].alive[c]) net.kill_channel(static_cast<int>(i), c);
                break;
            case WidthRule::ExpandInput: {
                const int in_alive = i == 0 ? net.arch.input.channels : net.layers[i - 1].alive_count();
                int excess = layer.alive_count() - specs[i].expand * in_alive;
                if (excess <= 0) break;
                std::vector<int> order;
                for (int c = 0; c < layer.out_channels; ++c)
                    if (layer.alive[c]) order.push_back(c);
                std::stable_sort(order.begin(), order.end(),
                                 [&](int a, int b) { return scores[i][a] < scores[i][b]; });
                for (int c : order) {
                    if (excess-- == 0) break;
                    net.kill_channel(static_cast<int>(i), c);
                }
                break;
            }
        }
    }
}

}  // namespace

void PruneConfig::validate() const {
    require(pretrain_epochs >= 0, ErrorKind::Domain, "pretrain epochs P must be >= 0");
    require(pretrain_lr > 0.0 && std::isfinite(pretrain_lr), ErrorKind::Domain, "pretrain_lr must be positive");
    require(lr_decay > 0.0, ErrorKind::Domain, "lr_decay must be positive");
    require(decay_every >= 1, ErrorKind::Domain, "decay_every must be >= 1");
    if (prune_lr) require(*prune_lr > 0.0 && std::isfinite(*prune_lr), ErrorKind::Domain, "prune_lr must be positive");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Domain, "momentum must be in [0, 1)");
    require(weight_decay >= 0.0, ErrorKind::Domain, "weight_decay must be >= 0");
    require(batch_size >= 1, ErrorKind::Domain, "batch_size must be >= 1");
    require(q >= 1, ErrorKind::Domain, "Q must be >= 1");
    require(k_absolute >= 0, ErrorKind::Domain, "k must be >= 0");
    require(k_absolute > 0 || (k_fraction > 0.0 && k_fraction < 1.0), ErrorKind::Domain,
            "k fraction must be in (0, 1)");
    require(eps_fraction > 0.0 && eps_fraction < 1.0, ErrorKind::Domain, "eps fraction must be in (0, 1)");
}

int PruneConfig::resolve_k(int initial_gates) const {
    if (k_absolute > 0) return k_absolute;
    return std::max(1, static_cast<int>(std::floor(k_fraction * initial_gates)));
}

double PruneConfig::prune_phase_lr() const {
    if (prune_lr) return *prune_lr;
    return pretrain_lr * std::pow(lr_decay, pretrain_epochs / decay_every);
}

GateScores gate_importance(Network& net, BatchStream& stream, int q, const SgdSettings& sgd, long long& step) {
    require(q >= 1, ErrorKind::Domain, "Q must be >= 1");
    GateScores acc(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) acc[i].assign(net.layers[i].out_channels, 0.0);

    ForwardCache cache;
    for (int it = 0; it < q; ++it, ++step) {
        const Batch batch = stream.next();
        compute_gradients(net, batch, cache, step);
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            const auto& g = net.layers[i].gate.grad;
            for (std::size_t c = 0; c < g.size(); ++c) acc[i][c] += g[c] * g[c];
        }
        apply_update(net, cache, sgd);
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        for (std::size_t c = 0; c < acc[i].size(); ++c)
            acc[i][c] = net.layers[i].alive[c] ? acc[i][c] / q : kDead;
    return acc;
}

int removable_gates(const Network& net) {
    int n = 0;
    for (int i : net.arch.prunable_layers()) n += net.layers[i].alive_count() - 1;
    return n;
}

PruneStepResult prune_step(Network& net, const GateScores& scores, int k) {
    require(k >= 1, ErrorKind::Domain, "prune count k must be >= 1");
    require(scores.size() == net.layers.size(), ErrorKind::Structural, "score table does not match the network");
    for (std::size_t i = 0; i < scores.size(); ++i)
        require(static_cast<int>(scores[i].size()) == net.layers[i].out_channels, ErrorKind::Structural,
                "score row " + std::to_string(i) + " has the wrong length");

    PruneStepResult result;
    if (removable_gates(net) < k) {
        result.stop = true;
        return result;
    }

    std::vector<std::tuple<double, int, int>> candidates;
    std::vector<int> alive(net.layers.size(), 0);
    for (int i : net.arch.prunable_layers()) {
        alive[i] = net.layers[i].alive_count();
        for (int c = 0; c < net.layers[i].out_channels; ++c) {
            if (!net.layers[i].alive[c]) continue;
            require(!std::isnan(scores[i][c]), ErrorKind::Numerical, "NaN gate importance");
            candidates.emplace_back(scores[i][c], i, c);
        }
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& [score, layer, channel] : candidates) {
        if (static_cast<int>(result.removed.size()) == k) break;
        if (alive[layer] <= 1) continue;
        net.kill_channel(layer, channel);
        --alive[layer];
        result.removed.emplace_back(layer, channel);
    }
    sync_derived(net, scores);
    return result;
}

PruneRun run_pruning(const ArchSpec& arch, const WidthConfig& widths, const Dataset& data, const PruneConfig& cfg,
                     std::optional<int> target_alive) {
    cfg.validate();
    validate_dataset(data);
    require(data.shape == arch.input, ErrorKind::Structural, "dataset shape does not match the architecture input");
    require(data.num_classes == arch.num_classes, ErrorKind::Structural,
            "dataset class count does not match the architecture");

    PruneRun run;
    run.network = init_network(arch, widths, derive_seed(cfg.seed, 1));
    Network& net = run.network;
    const int layers = arch.prunable_count();
    run.initial_gates = net.alive_gates();
    if (target_alive)
        require(*target_alive >= layers && *target_alive <= run.initial_gates, ErrorKind::Domain,
                "target alive gate count must lie in [L, initial gates]");

    if (cfg.pretrain_epochs > 0) {
        TrainSchedule pre;
        pre.learning_rate = cfg.pretrain_lr;
        pre.momentum = cfg.momentum;
        pre.weight_decay = cfg.weight_decay;
        pre.epochs = cfg.pretrain_epochs;
        for (int e = cfg.decay_every; e < cfg.pretrain_epochs; e += cfg.decay_every) pre.lr_milestones.push_back(e);
        pre.lr_decay = cfg.lr_decay;
        pre.batch_size = cfg.batch_size;
        pre.seed = derive_seed(cfg.seed, 2);
        train(net, data, pre);
    }

    auto& traj = run.trajectory;
    traj.arch_name = arch.name;
    traj.num_layers = layers;
    traj.seed = cfg.seed;
    traj.config = cfg;

    BatchStream stream(data.train, data.shape, cfg.batch_size, derive_seed(cfg.seed, 3));
    const SgdSettings sgd{cfg.prune_phase_lr(), cfg.momentum, cfg.weight_decay, false};
    const int k = cfg.resolve_k(run.initial_gates);
    const double floor = cfg.eps_fraction * run.initial_gates;
    const WidthConfig start = net.alive_widths();
    bool all_touched = false;
    long long step = 0;

    while (true) {
        const int alive = net.alive_gates();
        if (target_alive ? alive <= *target_alive : alive < floor) break;
        int k_eff = std::min(k, removable_gates(net));
        if (target_alive) k_eff = std::min(k_eff, alive - *target_alive);
        if (k_eff <= 0) break;

        const auto scores = gate_importance(net, stream, cfg.q, sgd, step);
        if (prune_step(net, scores, k_eff).stop) break;
        ++run.steps;
        const WidthConfig phi = net.alive_widths();
        run.widths_after_step.push_back(phi);
        if (!all_touched) {
            all_touched = true;
            for (std::size_t l = 0; l < phi.size(); ++l) all_touched = all_touched && phi[l] < start[l];
        }
        if (!all_touched) continue;
        const std::int64_t tau = count_params(arch, phi);
        if (traj.records.empty() || tau < traj.records.back().tau) traj.records.push_back({run.steps, tau, phi});
    }
    return run;
}

PruneTrajectory iterative_prune(const ArchSpec& arch, const WidthConfig& widths, const Dataset& data,
                                const PruneConfig& cfg) {
    auto run = run_pruning(arch, widths, data, cfg);
    if (run.trajectory.records.empty())
        throw Error(ErrorKind::EmptyTrajectory,
                    "pruning stopped before every layer lost a gate; no trajectory records were taken");
    return std::move(run.trajectory);
}

}  // namespace neuralscale
