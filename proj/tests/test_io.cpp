#include <filesystem>
#include <fstream>
#include <limits>

#include <unistd.h>

#include "doctest.h"
#include "neuralscale/errors.hpp"
#include "neuralscale/io.hpp"
#include "test_support.hpp"

using namespace neuralscale;
using namespace neuralscale::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("ns_io_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

PruneTrajectory random_trajectory(Rng& rng, int records) {
    PruneTrajectory t;
    t.arch_name = "random";
    t.num_layers = pick(rng, 1, 6);
    t.seed = rng.next_u64();
    t.config.q = pick(rng, 1, 50);
    t.config.k_fraction = rng.uniform() * 0.1 + 0.001;
    for (int r = 0; r < records; ++r) {
        TrajectoryRecord rec;
        rec.step = r + 1;
        rec.tau = static_cast<std::int64_t>(rng.below(1ull << 40)) + 1;
        for (int l = 0; l < t.num_layers; ++l) rec.phi.widths.push_back(pick(rng, 1, 5000));
        t.records.push_back(rec);
    }
    return t;
}

// Expects a ParseError carrying the given line number.
template <class F>
void expect_parse_line(F&& fn, std::size_t line) {
    try {
        fn();
        FAIL("no ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == line);
        CHECK(std::string(e.what()).rfind("line " + std::to_string(line) + ":", 0) == 0);
    }
}

std::string valid_text() {
    PruneTrajectory t;
    t.arch_name = "toy";
    t.num_layers = 2;
    t.records = {{1, 100, WidthConfig({4, 3})}, {2, 80, WidthConfig({3, 3})}, {3, 50, WidthConfig({3, 1})}};
    return trajectory_to_text(t);
}

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start < s.size()) {
        auto end = s.find('\n', start);
        out.push_back(s.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
}

}  // namespace

TEST_CASE("trajectory text round trips for random trajectories") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = random_trajectory(rng, pick(rng, 0, 30));
        const auto back = trajectory_from_text(trajectory_to_text(t));
        CHECK(back.arch_name == t.arch_name);
        CHECK(back.num_layers == t.num_layers);
        CHECK(back.seed == t.seed);
        CHECK(back.records == t.records);
        CHECK(back.config.q == t.config.q);
        CHECK(back.config.k_fraction == t.config.k_fraction);
    }
}

TEST_CASE("trajectory files round trip and an empty trajectory loads") {
    const auto dir = scratch("traj");
    Rng rng(3);
    const auto t = random_trajectory(rng, 7);
    save_trajectory(t, dir / "t.jsonl");
    CHECK(load_trajectory(dir / "t.jsonl").records == t.records);

    auto empty = random_trajectory(rng, 0);
    save_trajectory(empty, dir / "e.jsonl");
    const auto back = load_trajectory(dir / "e.jsonl");
    CHECK(back.records.empty());
    // Loading is fine; fitting it is not.
    try {
        build_design(back);
        FAIL("expected InsufficientData");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InsufficientData);
    }
    fs::remove_all(dir);
}

TEST_CASE("trajectory parse errors name the offending line") {
    const auto lines = split_lines(valid_text());
    REQUIRE(lines.size() == 5);

    SUBCASE("malformed json") {
        auto l = lines;
        l[2] = "{\"step\": 2, \"tau\": ";
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 3);
    }
    SUBCASE("phi length differs from L") {
        auto l = lines;
        l[3] = R"({"step":3,"tau":50,"phi":[3,1,1]})";
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 4);
    }
    SUBCASE("non-integer phi") {
        auto l = lines;
        l[1] = R"({"step":1,"tau":100,"phi":[4.5,3]})";
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 2);
    }
    SUBCASE("unknown record field") {
        auto l = lines;
        l[1] = R"({"step":1,"tau":100,"phi":[4,3],"loss":0.3})";
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 2);
    }
    SUBCASE("truncated: no end marker") {
        auto l = lines;
        l.pop_back();
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 5);
    }
    SUBCASE("truncated mid-record") {
        auto l = lines;
        l.resize(3);
        l[2] = l[2].substr(0, l[2].size() / 2);
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 3);
    }
    SUBCASE("end marker count mismatch") {
        auto l = lines;
        l[4] = R"({"end":true,"records":2})";
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 5);
    }
    SUBCASE("content after the end marker") {
        auto l = lines;
        l.push_back(R"({"step":4,"tau":40,"phi":[2,1]})");
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 6);
    }
    SUBCASE("bad header") {
        auto l = lines;
        l[0] = R"({"schema":"neuralscale.trajectory/1","arch":"toy","L":0,"seed":1})";
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 1);
        l[0] = R"({"schema":"other/9","arch":"toy","L":2,"seed":1})";
        expect_parse_line([&] { trajectory_from_text(join_lines(l)); }, 1);
    }
    SUBCASE("empty file") {
        expect_parse_line([&] { trajectory_from_text(""); }, 1);
    }
}

TEST_CASE("architecture documents round trip for presets and random architectures") {
    for (const auto& name : preset_names()) {
        const auto a = preset(name);
        const auto back = arch_from_json(arch_to_json(a));
        CHECK(back == a);
        CHECK(count_params(back, WidthConfig(back.default_widths())) == count_params(a, WidthConfig(a.default_widths())));
    }
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto a = random_arch(rng);
        CHECK(arch_from_json(arch_to_json(a)) == a);
    }
}

TEST_CASE("architecture files: preset references, unknown fields, missing files") {
    const auto dir = scratch("arch");
    const auto vgg = preset("vgg11");
    save_arch_file(vgg, dir / "vgg.json");
    CHECK(load_arch_file(dir / "vgg.json") == vgg);
    CHECK(resolve_arch((dir / "vgg.json").string()) == vgg);
    CHECK(resolve_arch("vgg11") == vgg);

    Json ref{{"preset", "vgg11"}, {"num_classes", 100}};
    const auto a = arch_from_json(ref);
    CHECK(a.num_classes == 100);
    CHECK(a.layers == vgg.layers);

    Json bad = arch_to_json(vgg);
    bad["colour"] = "blue";
    CHECK_THROWS_AS(arch_from_json(bad), Error);
    Json bad_layer = arch_to_json(vgg);
    bad_layer["layers"][0]["dilation"] = 2;
    CHECK_THROWS_AS(arch_from_json(bad_layer), Error);
    CHECK_THROWS_AS(arch_from_json(Json{{"preset", "nope"}}), Error);
    Json fractional = arch_to_json(vgg);
    fractional["num_classes"] = 3.7;
    CHECK_THROWS_AS(arch_from_json(fractional), Error);

    try {
        resolve_arch((dir / "missing.json").string());
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Domain);
    }
    try {
        read_text(dir / "missing.json");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
    fs::remove_all(dir);
}

TEST_CASE("scaling parameters round trip exactly") {
    const auto dir = scratch("params");
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        ScalingParams p;
        p.arch_name = "x";
        const int L = pick(rng, 1, 10);
        for (int l = 0; l < L; ++l) {
            p.alpha.push_back(std::exp(rng.normal() * 5));
            p.beta.push_back(rng.normal());
            p.rss.push_back(rng.uniform());
        }
        p.n = pick(rng, 2, 100);
        p.used_qr = rng.uniform() < 0.5;
        save_params(p, dir / "p.json");
        const auto q = load_params(dir / "p.json");
        CHECK(q.alpha == p.alpha);
        CHECK(q.beta == p.beta);
        CHECK(q.rss == p.rss);
        CHECK(q.n == p.n);
        CHECK(q.used_qr == p.used_qr);
    }
    Json j = params_to_json(ScalingParams{"x", {1.0}, {0.5}, {0.0}, 3, false});
    j["gamma"] = 1;
    CHECK_THROWS_AS(params_from_json(j), Error);
    fs::remove_all(dir);
}

TEST_CASE("widths files and bare arrays") {
    const auto dir = scratch("widths");
    const auto a = mlp(4, {8, 6}, 2);
    ScaledConfig sc;
    sc.widths = WidthConfig({7, 5});
    sc.achieved_params = count_params(a, sc.widths);
    sc.target = sc.achieved_params;
    sc.tau_star = 123.5;
    save_widths(sc, a, dir / "w.json");
    CHECK(load_widths(dir / "w.json") == sc.widths);

    write_text_atomic(dir / "bare.json", "[3, 2]");
    CHECK(load_widths(dir / "bare.json") == WidthConfig({3, 2}));
    write_text_atomic(dir / "bad.json", "[3, 2.5]");
    CHECK_THROWS_AS(load_widths(dir / "bad.json"), Error);
    fs::remove_all(dir);
}

TEST_CASE("atomic writes leave no temporary files") {
    const auto dir = scratch("atomic");
    write_text_atomic(dir / "a.txt", "hello");
    write_text_atomic(dir / "a.txt", "world");
    CHECK(read_text(dir / "a.txt") == "world");
    int n = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
    CHECK(n == 1);
    fs::remove_all(dir);
}
