#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "neuralscale/errors.hpp"
#include "neuralscale/prune.hpp"
#include "test_support.hpp"

using namespace neuralscale;
using namespace neuralscale::testing;

namespace {

Dataset blobs_for(const ArchSpec& a, std::uint64_t seed = 1, int per_class = 100) {
    BlobOptions o;
    o.num_classes = a.num_classes;
    o.dim = a.input.channels;
    o.train_per_class = per_class;
    o.validation_per_class = 20;
    o.seed = seed;
    return make_blobs(o);
}

GateScores flat_scores(const Network& net, double v) {
    GateScores s;
    for (const auto& l : net.layers) s.emplace_back(l.out_channels, v);
    return s;
}

// One removal at a time: the globally lowest alive gate in a layer that keeps
// at least one channel afterwards.
std::set<std::pair<int, int>> simulate_removals(std::vector<std::vector<double>> scores, std::vector<int> alive, int k) {
    std::set<std::pair<int, int>> removed;
    for (int r = 0; r < k; ++r) {
        double best = std::numeric_limits<double>::infinity();
        std::pair<int, int> pick{-1, -1};
        for (std::size_t l = 0; l < scores.size(); ++l) {
            if (alive[l] <= 1) continue;
            for (std::size_t c = 0; c < scores[l].size(); ++c)
                if (!removed.count({static_cast<int>(l), static_cast<int>(c)}) && scores[l][c] < best) {
                    best = scores[l][c];
                    pick = {static_cast<int>(l), static_cast<int>(c)};
                }
        }
        removed.insert(pick);
        --alive[pick.first];
    }
    return removed;
}

PruneConfig quick_config() {
    PruneConfig cfg;
    cfg.pretrain_epochs = 2;
    cfg.q = 5;
    cfg.batch_size = 32;
    return cfg;
}

}  // namespace

TEST_CASE("gate_importance: Q must be positive") {
    const auto a = mlp(3, {3}, 2);
    const auto d = blobs_for(a);
    auto net = init_network(a, WidthConfig({3}), 1);
    BatchStream s(d.train, d.shape, 8, 1);
    long long step = 0;
    CHECK_THROWS_AS(gate_importance(net, s, 0, {}, step), Error);
}

TEST_CASE("gate_importance: squared gate gradient matches finite differences") {
    const auto a = mlp(3, {3, 2}, 2, true);
    REQUIRE(count_params(a, WidthConfig({3, 2})) <= 50);
    const auto d = blobs_for(a, 2, 10);
    auto net = init_network(a, WidthConfig({3, 2}), 7);
    auto reference = net;

    BatchStream s1(d.train, d.shape, 8, 42), s2(d.train, d.shape, 8, 42);
    const Batch batch = s2.next();
    long long step = 0;
    const auto scores = gate_importance(net, s1, 1, {}, step);
    CHECK(step == 1);
    for (std::size_t l = 0; l < reference.layers.size(); ++l)
        for (std::size_t c = 0; c < reference.layers[l].gate.size(); ++c) {
            const double fd = finite_difference(reference, batch, reference.layers[l].gate.value[c]);
            CHECK(close_rel(scores[l][c], fd * fd, 1e-3, 1e-12));
        }
}

TEST_CASE("gate_importance: channel with zero downstream weights scores 0") {
    const auto a = mlp(4, {5, 3}, 3);
    const auto d = blobs_for(a);
    auto net = init_network(a, WidthConfig({5, 3}), 3);
    for (int k = 0; k < 3; ++k) net.classifier.weight.value[k * 3 + 1] = 0.0;
    BatchStream s(d.train, d.shape, 16, 1);
    long long step = 0;
    const auto scores = gate_importance(net, s, 1, {}, step);
    CHECK(scores[1][1] == 0.0);
    CHECK(scores[1][0] > 0.0);
}

TEST_CASE("gate_importance: duplicate channels score equally") {
    const auto a = mlp(4, {4}, 3, true);
    const auto d = blobs_for(a);
    auto net = init_network(a, WidthConfig({4}), 5);
    auto& w = net.layers[0].weight.value;
    std::copy_n(w.begin(), 4, w.begin() + 4);
    net.layers[0].bias.value[1] = net.layers[0].bias.value[0];
    for (int k = 0; k < 3; ++k) net.classifier.weight.value[k * 4 + 1] = net.classifier.weight.value[k * 4];
    BatchStream s(d.train, d.shape, 16, 1);
    long long step = 0;
    const auto scores = gate_importance(net, s, 4, {}, step);
    CHECK(std::abs(scores[0][0] - scores[0][1]) <= 1e-9);
}

TEST_CASE("gate_importance: dead gates score -infinity") {
    const auto a = mlp(4, {5}, 2);
    const auto d = blobs_for(a);
    auto net = init_network(a, WidthConfig({5}), 5);
    net.kill_channel(0, 3);
    BatchStream s(d.train, d.shape, 16, 1);
    long long step = 0;
    const auto scores = gate_importance(net, s, 2, {}, step);
    CHECK(scores[0][3] == -std::numeric_limits<double>::infinity());
}

TEST_CASE("prune_step: unique minimum is removed") {
    const auto a = mlp(4, {6, 6, 6}, 2);
    auto net = init_network(a, WidthConfig({6, 6, 6}), 1);
    auto scores = flat_scores(net, 1.0);
    scores[2][5] = 0.1;
    const auto r = prune_step(net, scores, 1);
    REQUIRE(r.removed.size() == 1);
    CHECK(r.removed[0] == std::pair{2, 5});
    CHECK(net.layers[2].alive[5] == 0);
    CHECK(net.layers[2].gate.value[5] == 0.0);
    CHECK(net.alive_gates() == 17);
}

TEST_CASE("prune_step: never empties a layer") {
    const auto a = mlp(4, {3, 4}, 2);
    auto net = init_network(a, WidthConfig({3, 4}), 1);
    net.kill_channel(0, 0);
    net.kill_channel(0, 1);
    auto scores = flat_scores(net, 1.0);
    scores[0][2] = 0.0;  // lowest, but the last channel of its layer
    scores[1][3] = 0.5;
    const auto r = prune_step(net, scores, 1);
    REQUIRE(r.removed.size() == 1);
    CHECK(r.removed[0] == std::pair{1, 3});
    CHECK(net.layers[0].alive_count() == 1);
}

TEST_CASE("prune_step agrees with one-at-a-time removal (toy score tables)") {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        const std::vector<int> widths{pick(rng, 1, 5), pick(rng, 1, 5), pick(rng, 1, 5)};
        const auto a = mlp(3, widths, 2);
        auto net = init_network(a, WidthConfig(widths), 1);
        GateScores scores;
        for (int w : widths) {
            scores.emplace_back();
            for (int c = 0; c < w; ++c) scores.back().push_back(static_cast<double>(rng.below(4)) + 0.001 * scores.size() + 0.0001 * c);
        }
        const int removable = removable_gates(net);
        if (removable == 0) {
            CHECK(prune_step(net, scores, 1).stop);
            continue;
        }
        const bool all = trial % 2 == 0;
        const int k = all ? removable : pick(rng, 1, removable);
        const auto oracle = simulate_removals(scores, widths, k);
        const auto r = prune_step(net, scores, k);
        CHECK_FALSE(r.stop);
        CHECK(std::set<std::pair<int, int>>(r.removed.begin(), r.removed.end()) == oracle);
        if (all)
            for (const auto& l : net.layers) CHECK(l.alive_count() == 1);
    }
}

TEST_CASE("prune_step: fewer removable gates than k is a stop signal") {
    const auto a = mlp(4, {2, 2}, 2);
    auto net = init_network(a, WidthConfig({2, 2}), 1);
    const auto r = prune_step(net, flat_scores(net, 1.0), 3);
    CHECK(r.stop);
    CHECK(r.removed.empty());
    CHECK(net.alive_gates() == 4);
}

TEST_CASE("prune_step: inverted-bottleneck expansion and depthwise layers follow their inputs") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_arch(rng, Family::InvertedBottleneck);
        auto w = random_widths(rng, a, 6);
        for (auto& x : w.widths) x = std::max(x, 3);
        auto net = init_network(a, w, 2);
        for (int step = 0; step < 3 && removable_gates(net) > 0; ++step) {
            GateScores scores;
            for (const auto& l : net.layers) {
                scores.emplace_back();
                for (int c = 0; c < l.out_channels; ++c) scores.back().push_back(l.alive[c] ? rng.uniform() : -1.0 / 0.0);
            }
            prune_step(net, scores, 1);
            for (std::size_t i = 0; i < a.layers.size(); ++i) {
                const int in_alive = i == 0 ? a.input.channels : net.layers[i - 1].alive_count();
                if (a.layers[i].width_rule == WidthRule::ExpandInput)
                    CHECK(net.layers[i].alive_count() == a.layers[i].expand * in_alive);
                if (a.layers[i].width_rule == WidthRule::SameAsInput)
                    CHECK(net.layers[i].alive == net.layers[i - 1].alive);
            }
            const auto lw = layer_widths(a, net.alive_widths());
            for (std::size_t i = 0; i < lw.size(); ++i) CHECK(net.layers[i].alive_count() == lw[i]);
        }
    }
}

TEST_CASE("iterative_prune on the desk MLP: protocol invariants") {
    const auto a = mlp();
    const auto d = blobs_for(a);
    PruneConfig cfg = quick_config();
    const auto run = run_pruning(a, WidthConfig(a.default_widths()), d, cfg);
    const auto& t = run.trajectory;
    REQUIRE(run.initial_gates == 200);
    REQUIRE(!t.records.empty());

    for (std::size_t i = 1; i < t.records.size(); ++i) CHECK(t.records[i].tau < t.records[i - 1].tau);
    for (const auto& r : t.records) CHECK(count_params(a, r.phi) == r.tau);

    int first_touched = -1;
    for (std::size_t s = 0; s < run.widths_after_step.size() && first_touched < 0; ++s) {
        const auto& w = run.widths_after_step[s];
        if (w[0] < 120 && w[1] < 80) first_touched = static_cast<int>(s) + 1;
    }
    CHECK(t.records.front().step == first_touched);

    const int final_alive = run.network.alive_gates();
    CHECK(final_alive < 0.05 * 200);
    CHECK(run.widths_after_step.size() >= 2);
    const auto& prev = run.widths_after_step[run.widths_after_step.size() - 2];
    CHECK(prev.total() >= 0.05 * 200);
    for (const auto& l : run.network.layers) CHECK(l.alive_count() >= 1);
}

TEST_CASE("iterative_prune is deterministic for a fixed seed") {
    const auto a = mlp(16, {30, 20}, 4);
    const auto d = blobs_for(a);
    const auto cfg = quick_config();
    const auto t1 = iterative_prune(a, d, cfg);
    const auto t2 = iterative_prune(a, d, cfg);
    CHECK(t1.records == t2.records);
    auto other = cfg;
    other.seed = 2;
    CHECK(iterative_prune(a, d, other).records != t1.records);
}

TEST_CASE("iterative_prune: one hidden layer records from the first prune") {
    const auto a = mlp(16, {40}, 4);
    const auto t = iterative_prune(a, blobs_for(a), quick_config());
    REQUIRE(!t.records.empty());
    CHECK(t.records.front().step == 1);
}

TEST_CASE("iterative_prune: 100 gates, stop at 5%") {
    const auto a = mlp(16, {60, 40}, 4);
    auto cfg = quick_config();
    cfg.k_absolute = 3;
    const auto run = run_pruning(a, WidthConfig({60, 40}), blobs_for(a), cfg);
    REQUIRE(run.widths_after_step.size() >= 2);
    CHECK(run.network.alive_gates() < 5);
    CHECK(run.widths_after_step[run.widths_after_step.size() - 2].total() >= 5);
}

TEST_CASE("iterative_prune: a layer that can never be pruned gives an empty trajectory") {
    const auto a = mlp(16, {1, 30}, 4);
    try {
        iterative_prune(a, blobs_for(a), quick_config());
        FAIL("expected an empty trajectory");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptyTrajectory);
    }
}

TEST_CASE("run_pruning: target alive count is hit exactly") {
    const auto a = mlp(16, {37, 24}, 4);
    const auto run = run_pruning(a, WidthConfig({37, 24}), blobs_for(a), quick_config(), 31);
    CHECK(run.network.alive_gates() == 31);
}

TEST_CASE("iterative_prune on conv families keeps the recount invariant") {
    TextureOptions o;
    o.num_classes = 2;
    o.size = 8;
    o.train_per_class = 16;
    o.validation_per_class = 4;
    const auto d = make_textures(o);
    Rng rng(31);
    for (auto fam : {Family::FeedforwardConv, Family::Residual, Family::InvertedBottleneck}) {
        auto a = random_arch(rng, fam);
        a.input = {3, 8, 8};
        a.num_classes = 2;
        auto w = random_widths(rng, a, 8);
        for (auto& x : w.widths) x = std::max(x, 4);
        PruneConfig cfg;
        cfg.pretrain_epochs = 0;
        cfg.q = 2;
        cfg.batch_size = 8;
        const auto run = run_pruning(a, w, d, cfg);
        CAPTURE(to_string(fam));
        for (std::size_t i = 1; i < run.trajectory.records.size(); ++i)
            CHECK(run.trajectory.records[i].tau < run.trajectory.records[i - 1].tau);
        for (const auto& r : run.trajectory.records) CHECK(count_params(a, r.phi) == r.tau);
        CHECK(run.network.alive_params() == count_params(a, run.network.alive_widths()));
    }
}

TEST_CASE("prune config validation and defaults") {
    PruneConfig cfg;
    CHECK(cfg.resolve_k(200) == 4);
    CHECK(cfg.resolve_k(10) == 1);
    CHECK(cfg.prune_phase_lr() == doctest::Approx(0.01));
    cfg.q = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.eps_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.pretrain_epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
