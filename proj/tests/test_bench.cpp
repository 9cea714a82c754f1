#include <cmath>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "neuralscale/bench.hpp"
#include "neuralscale/errors.hpp"
#include "test_support.hpp"

using namespace neuralscale;
using namespace neuralscale::testing;
namespace fs = std::filesystem;

namespace {

std::int64_t default_count(const ArchSpec& a) { return count_params(a, WidthConfig(a.default_widths())); }

ArchSpec bench_arch() { return mlp(16, {160, 120}, 4); }

Dataset bench_data() {
    BlobOptions o;
    o.num_classes = 4;
    o.dim = 16;
    o.train_per_class = 60;
    o.validation_per_class = 20;
    o.noise = 2.0;
    o.seed = 5;
    return make_blobs(o);
}

PruneConfig quick_prune() {
    PruneConfig p;
    p.pretrain_epochs = 2;
    p.q = 4;
    p.batch_size = 32;
    p.k_fraction = 0.05;
    p.seed = 3;
    return p;
}

CompareConfig quick_compare(std::vector<std::int64_t> budgets) {
    CompareConfig c;
    c.budgets = std::move(budgets);
    c.repeats = 2;
    c.seed = 17;
    c.train.epochs = 3;
    c.train.batch_size = 32;
    c.train.learning_rate = 0.05;
    c.train.lr_milestones = {};
    c.prune = quick_prune();
    c.descent.max_iters = 2;
    c.threads = 2;
    return c;
}

}  // namespace

TEST_CASE("uniform match at the default count is the default network") {
    for (const auto& name : preset_names()) {
        const auto a = preset(name);
        const auto m = uniform_match(a, default_count(a));
        CHECK(m.ratio == 1.0);
        CHECK(m.widths == WidthConfig(a.default_widths()));
        CHECK(m.params == default_count(a));
    }
}

TEST_CASE("uniform match recovers a quarter-width VGG") {
    const auto a = preset("vgg11");
    const auto quarter = uniform_widths(a, 0.25);
    const auto target = count_params(a, quarter);
    const auto m = uniform_match(a, target);
    CHECK(m.params == target);
    CHECK(m.widths == quarter);
}

TEST_CASE("uniform match is never beaten by a dense grid of multipliers") {
    Rng rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const auto a = random_arch(rng);
        const auto base = default_count(a);
        const auto floor = count_params(a, WidthConfig(std::vector<int>(a.prunable_count(), 1)));
        const std::int64_t target = floor + static_cast<std::int64_t>(rng.uniform() * 3.0 * double(base));
        const auto m = uniform_match(a, target);
        CHECK(m.params == count_params(a, m.widths));
        CHECK(m.widths == uniform_widths(a, m.ratio));
        const double got = std::abs(double(m.params - target));
        double best = std::numeric_limits<double>::infinity();
        for (int g = 1; g <= 20000; ++g) {
            const double r = g * 2e-4 * 5.0;  // (0, 5]
            best = std::min(best, std::abs(double(count_params(a, uniform_widths(a, r)) - target)));
        }
        CHECK(got <= best);
    }
}

TEST_CASE("uniform match is idempotent and rejects impossible budgets") {
    const auto a = preset("vgg11");
    for (double frac : {0.03, 0.2, 0.7, 1.9}) {
        const auto m = uniform_match(a, static_cast<std::int64_t>(frac * double(default_count(a))));
        const auto again = uniform_match(a, m.params);
        CHECK(again.params == m.params);
        CHECK(again.widths == m.widths);
    }
    const auto floor = count_params(a, WidthConfig(std::vector<int>(a.prunable_count(), 1)));
    CHECK(uniform_match(a, floor).widths == WidthConfig(std::vector<int>(a.prunable_count(), 1)));
    try {
        uniform_match(a, floor - 1);
        FAIL("expected InfeasibleBudget");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InfeasibleBudget);
    }
}

TEST_CASE("morphnet baseline prunes half of the gates, then scales uniformly") {
    const auto a = bench_arch();
    const auto data = bench_data();
    const auto pruned = morphnet_prune(a, data, quick_prune());
    CHECK(pruned.initial_gates == 280);
    CHECK(pruned.target_alive == 140);
    CHECK(pruned.alive_gates == 140);
    CHECK(pruned.pruned.total() == 140);
    for (std::size_t l = 0; l < pruned.pruned.size(); ++l) {
        CHECK(pruned.pruned[l] >= 1);
        CHECK(pruned.pruned[l] <= a.default_widths()[l]);
    }

    // Odd totals round the target up.
    const auto odd = mlp(16, {161, 120}, 4);
    CHECK(morphnet_prune(odd, data, quick_prune()).target_alive == 141);

    const auto own = count_params(a, pruned.pruned);
    const auto same = morphnet_scale(pruned, a, own);
    CHECK(same.scaled.ratio == 1.0);
    CHECK(same.scaled.widths == pruned.pruned);

    // The hidden-to-hidden product dominates, so 4x the parameters needs about 2x the widths.
    const auto big = morphnet_scale(pruned, a, 4 * own);
    CHECK(big.scaled.ratio == doctest::Approx(2.0).epsilon(0.1));
    CHECK(std::abs(double(big.scaled.params - 4 * own)) <= 0.01 * double(4 * own));

    const auto direct = morphnet_taylor(a, data, 4 * own, quick_prune());
    CHECK(direct.scaled.widths == big.scaled.widths);
}

TEST_CASE("method names") {
    for (auto m : {Method::Uniform, Method::MorphnetTaylor, Method::NeuralScaleIter1, Method::NeuralScaleIterK})
        CHECK(method_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(method_from_string("random-search"), Error);
}

TEST_CASE("compare: fair budgets, paired seeds, correct aggregates") {
    const auto a = bench_arch();
    const auto data = bench_data();
    const auto budgets = std::vector<std::int64_t>{default_count(a) / 4, default_count(a) / 2};
    const auto report = compare(a, data, quick_compare(budgets));
    REQUIRE(report.rows.size() == 8);
    REQUIRE(report.morphnet.has_value());

    for (const auto& row : report.rows) {
        REQUIRE(row.feasible);
        CHECK(row.achieved_params == count_params(a, row.widths));
        CHECK(std::abs(double(row.achieved_params - row.budget)) <= 0.02 * double(row.budget));
        REQUIRE(row.accuracies.size() == 2);
        double sum = 0.0;
        for (double acc : row.accuracies) {
            CHECK(acc >= 0.0);
            CHECK(acc <= 1.0);
            sum += acc;
        }
        CHECK(row.mean == doctest::Approx(sum / 2.0));
        CHECK(row.min == std::min(row.accuracies[0], row.accuracies[1]));
        CHECK(row.max == std::max(row.accuracies[0], row.accuracies[1]));
        CHECK(row.seeds == report.rows.front().seeds);
    }
    CHECK(report.rows[0].budget == budgets[0]);
    CHECK(report.rows[0].method == Method::Uniform);
    CHECK(report.rows[1].method == Method::MorphnetTaylor);
    CHECK(report.rows[2].method == Method::NeuralScaleIter1);
    CHECK(report.rows[3].method == Method::NeuralScaleIterK);
    CHECK(report.rows[0].widths == uniform_match(a, budgets[0]).widths);

    // The CSV carries one line per feasible row and reproduces the aggregates.
    std::istringstream csv(report_csv(report));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "params,mean,min,max,method");
    int n = 0;
    while (std::getline(csv, line)) {
        const auto& row = report.rows[n++];
        std::istringstream fields(line);
        std::string p, mean, mn, mx, method;
        std::getline(fields, p, ',');
        std::getline(fields, mean, ',');
        std::getline(fields, mn, ',');
        std::getline(fields, mx, ',');
        std::getline(fields, method, ',');
        CHECK(std::stoll(p) == row.achieved_params);
        CHECK(std::stod(mean) == row.mean);
        CHECK(std::stod(mn) == row.min);
        CHECK(std::stod(mx) == row.max);
        CHECK(method == to_string(row.method));
    }
    CHECK(n == 8);

    const Json j = report_to_json(report);
    CHECK(j["rows"].size() == 8);
    CHECK(j["L"] == 2);
    CHECK(j["qualitative"]["available"] == true);
    CHECK(j["qualitative"]["budget"] == budgets[0]);
}

TEST_CASE("compare is independent of the thread count") {
    const auto a = bench_arch();
    const auto data = bench_data();
    auto cfg = quick_compare({default_count(a) / 3});
    cfg.methods = {Method::Uniform, Method::NeuralScaleIter1};
    cfg.threads = 1;
    const auto one = compare(a, data, cfg);
    cfg.threads = 4;
    const auto four = compare(a, data, cfg);
    REQUIRE(one.rows.size() == four.rows.size());
    for (std::size_t i = 0; i < one.rows.size(); ++i) {
        CHECK(one.rows[i].widths == four.rows[i].widths);
        CHECK(one.rows[i].accuracies == four.rows[i].accuracies);
    }
}

TEST_CASE("compare marks unreachable budgets instead of failing") {
    const auto a = bench_arch();
    const auto data = bench_data();
    auto cfg = quick_compare({10, default_count(a) / 2});
    cfg.methods = {Method::Uniform, Method::MorphnetTaylor};
    const auto report = compare(a, data, cfg);
    REQUIRE(report.rows.size() == 4);
    CHECK_FALSE(report.rows[0].feasible);
    CHECK_FALSE(report.rows[1].feasible);
    CHECK(report.rows[0].accuracies.empty());
    CHECK(report.rows[2].feasible);
    CHECK(report_csv(report).find("\n10,") == std::string::npos);

    const auto dir = fs::temp_directory_path() / ("ns_bench_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    write_report(report, dir);
    CHECK(read_json(dir / "report.json")["rows"][0]["feasible"] == false);
    CHECK(read_text(dir / "accuracy_vs_params.csv").rfind("params,mean,min,max,method\n", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("compare configuration is validated") {
    const auto a = bench_arch();
    const auto data = bench_data();
    auto cfg = quick_compare({});
    CHECK_THROWS_AS(compare(a, data, cfg), Error);
    cfg = quick_compare({1000});
    cfg.repeats = 0;
    CHECK_THROWS_AS(compare(a, data, cfg), Error);
}
