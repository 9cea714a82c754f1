#include "neuralscale/descent.hpp"

#include <cmath>
#include <cstdio>

#include "neuralscale/errors.hpp"

namespace neuralscale {

namespace {

constexpr const char* kDescentSchema = "neuralscale.descent/1";
constexpr const char* kIterationSchema = "neuralscale.iteration/1";

std::string data_fingerprint(const Dataset& d) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const Split* s : {&d.train, &d.validation}) {
        mix(s->features.data(), s->features.size() * sizeof(double));
        mix(s->labels.data(), s->labels.size() * sizeof(int));
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Json run_identity(const ArchSpec& arch, const Dataset& data, std::int64_t tau_hat, const DescentConfig& cfg) {
    Json j;
    j["arch"] = arch_to_json(arch);
    j["tau_hat"] = tau_hat;
    j["config"] = descent_config_to_json(cfg);
    j["data"] = data_fingerprint(data);
    return j;
}

ScaledConfig scaled_from_json(const Json& j) {
    ScaledConfig sc;
    sc.widths = WidthConfig(j.at("widths").get<std::vector<int>>());
    sc.achieved_params = j.at("achieved_params").get<std::int64_t>();
    sc.target = j.at("target").get<std::int64_t>();
    sc.tau_star = j.at("tau_star").get<double>();
    sc.iterations_used = j.at("iterations").get<int>();
    sc.converged = j.at("converged").get<bool>();
    return sc;
}

// A complete iteration directory, or nothing if it is missing or partial.
std::optional<DescentIteration> load_iteration(const std::filesystem::path& dir, int index) {
    const auto manifest = dir / "manifest.json";
    if (!std::filesystem::exists(manifest)) return std::nullopt;
    try {
        const Json m = read_json(manifest);
        if (m.value("schema", "") != kIterationSchema || !m.value("complete", false) || m.at("index") != index)
            return std::nullopt;
        DescentIteration it;
        it.index = index;
        it.seed = m.at("seed").get<std::uint64_t>();
        it.start = WidthConfig(m.at("start").get<std::vector<int>>());
        it.delta = m.at("delta").get<double>();
        it.trajectory = load_trajectory(dir / "trajectory.jsonl");
        it.params = load_params(dir / "params.json");
        it.scaled = scaled_from_json(read_json(dir / "widths.json"));
        return it;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void write_iteration(const std::filesystem::path& dir, const DescentIteration& it, const ArchSpec& arch) {
    std::filesystem::create_directories(dir);
    std::filesystem::remove(dir / "manifest.json");
    save_trajectory(it.trajectory, dir / "trajectory.jsonl");
    save_params(it.params, dir / "params.json");
    save_widths(it.scaled, arch, dir / "widths.json");
    Json m;
    m["schema"] = kIterationSchema;
    m["index"] = it.index;
    m["seed"] = it.seed;
    m["start"] = it.start.widths;
    m["delta"] = it.delta;
    m["achieved_params"] = it.scaled.achieved_params;
    m["files"] = {{"trajectory", "trajectory.jsonl"}, {"params", "params.json"}, {"widths", "widths.json"}};
    m["complete"] = true;
    m["finished_at"] = utc_timestamp();
    write_json_atomic(dir / "manifest.json", m);  // written last: marks the directory complete
}

void write_top_manifest(const std::filesystem::path& out, const Json& identity, const DescentHistory& h,
                        const std::string& status, const Json& failure, const std::string& started) {
    Json m;
    m["schema"] = kDescentSchema;
    m["run"] = identity;
    m["initial_widths"] = h.initial.widths;
    Json iters = Json::array();
    for (const auto& it : h.iterations) {
        iters.push_back({{"index", it.index},
                         {"dir", iteration_dir_name(it.index)},
                         {"seed", it.seed},
                         {"achieved_params", it.scaled.achieved_params},
                         {"delta", it.delta}});
    }
    m["iterations"] = iters;
    m["status"] = status;
    if (!failure.is_null()) m["failure"] = failure;
    m["started_at"] = started;
    m["updated_at"] = utc_timestamp();
    write_json_atomic(out / "manifest.json", m);
}

bool converged_after(const std::vector<DescentIteration>& its, const DescentConfig& cfg) {
    if (static_cast<int>(its.size()) < cfg.patience) return false;
    for (std::size_t i = its.size() - cfg.patience; i < its.size(); ++i)
        if (its[i].delta > cfg.threshold) return false;
    return true;
}

}  // namespace

void DescentConfig::validate() const {
    require(max_iters >= 1, ErrorKind::Domain, "max_iters must be >= 1");
    require(threshold >= 0.0, ErrorKind::Domain, "convergence threshold must be >= 0");
    require(patience >= 1, ErrorKind::Domain, "patience must be >= 1");
    require(budget_tol > 0.0, ErrorKind::Domain, "budget tolerance must be positive");
    prune.validate();
    tau.validate();
}

Json descent_config_to_json(const DescentConfig& cfg) {
    Json j;
    j["max_iters"] = cfg.max_iters;
    j["threshold"] = cfg.threshold;
    j["patience"] = cfg.patience;
    j["budget_tol"] = cfg.budget_tol;
    j["prune"] = prune_config_to_json(cfg.prune);
    j["tau"] = {{"method", std::string(to_string(cfg.tau.method))},
                {"eta", cfg.tau.eta ? Json(*cfg.tau.eta) : Json(nullptr)},
                {"max_iters", cfg.tau.max_iters},
                {"rel_tol", cfg.tau.rel_tol}};
    return j;
}

std::string iteration_dir_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "iter_%03d", index);
    return buf;
}

double convergence_delta(const WidthConfig& prev, const WidthConfig& next) {
    require(prev.size() == next.size(), ErrorKind::Structural, "width configs differ in length");
    require(prev.size() > 0, ErrorKind::Structural, "empty width config");
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < prev.size(); ++l) {
        num += std::abs(static_cast<double>(next[l]) - prev[l]);
        den += prev[l];
    }
    require(den > 0.0, ErrorKind::Domain, "previous config has no width");
    return num / den;
}

DescentHistory architecture_descent(const ArchSpec& arch, const Dataset& data, std::int64_t tau_hat,
                                    const DescentConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
    cfg.validate();
    validate_arch(arch);
    validate_dataset(data);

    DescentHistory h;
    h.tau_hat = tau_hat;
    h.initial = uniform_match(arch, tau_hat).widths;

    const Json identity = run_identity(arch, data, tau_hat, cfg);
    std::string started = utc_timestamp();
    if (out_dir) {
        const auto top = *out_dir / "manifest.json";
        if (std::filesystem::exists(top)) {
            const Json m = read_json(top);
            require(m.value("schema", "") == kDescentSchema && m.contains("run") && m.at("run") == identity,
                    ErrorKind::Domain,
                    "'" + out_dir->string() + "' holds a different descent run; choose another output directory");
            started = m.value("started_at", started);
            WidthConfig expect = h.initial;
            for (int i = 0; i < cfg.max_iters; ++i) {
                auto it = load_iteration(*out_dir / iteration_dir_name(i), i);
                if (!it || it->start != expect) break;
                expect = it->scaled.widths;
                h.iterations.push_back(std::move(*it));
                if (converged_after(h.iterations, cfg)) break;
            }
            h.resumed_from = static_cast<int>(h.iterations.size());
        }
        std::filesystem::create_directories(*out_dir);
        write_top_manifest(*out_dir, identity, h, "running", nullptr, started);
    }

    h.converged = converged_after(h.iterations, cfg);
    for (int i = static_cast<int>(h.iterations.size()); i < cfg.max_iters && !h.converged; ++i) {
        DescentIteration it;
        it.index = i;
        it.seed = cfg.prune.seed + static_cast<std::uint64_t>(i);
        it.start = h.iterations.empty() ? h.initial : h.iterations.back().scaled.widths;
        try {
            PruneConfig pc = cfg.prune;
            pc.seed = it.seed;
            it.trajectory = iterative_prune(arch, it.start, data, pc);
            it.params = solve_theta(build_design(it.trajectory));
            it.params.arch_name = arch.name;
            it.scaled = generate_widths(it.params, arch, tau_hat, cfg.tau);
            if (it.scaled.relative_error() > cfg.budget_tol)
                fail(ErrorKind::Numerical, "iteration " + std::to_string(i) + " reached " +
                                               std::to_string(it.scaled.achieved_params) + " parameters, outside " +
                                               std::to_string(cfg.budget_tol * 100) + "% of the target");
            it.delta = convergence_delta(it.start, it.scaled.widths);
        } catch (const Error& e) {
            if (out_dir) {
                Json failure{{"iteration", i}, {"kind", to_string(e.kind())}, {"message", e.what()}};
                write_top_manifest(*out_dir, identity, h, "failed", failure, started);
            }
            throw;
        }
        if (out_dir) write_iteration(*out_dir / iteration_dir_name(i), it, arch);
        h.iterations.push_back(std::move(it));
        h.converged = converged_after(h.iterations, cfg);
        if (out_dir) write_top_manifest(*out_dir, identity, h, "running", nullptr, started);
        if (cfg.after_iteration) cfg.after_iteration(i);
    }
    if (out_dir) write_top_manifest(*out_dir, identity, h, h.converged ? "converged" : "max-iters", nullptr, started);
    return h;
}

}  // namespace neuralscale
