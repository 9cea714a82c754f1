// neuralscale command-line tool.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "neuralscale/bench.hpp"
#include "neuralscale/dataset.hpp"
#include "neuralscale/descent.hpp"
#include "neuralscale/errors.hpp"
#include "neuralscale/io.hpp"

#ifndef NEURALSCALE_VERSION
#define NEURALSCALE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace neuralscale;

namespace {

enum Exit : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kDomain = 3,
    kNumerical = 4,
    kStructural = 5,
    kParse = 6,
    kIo = 7,
};

int exit_code_for(ErrorKind k) {
    switch (k) {
        case ErrorKind::Domain:
        case ErrorKind::InsufficientData:
        case ErrorKind::EmptyTrajectory:
        case ErrorKind::InfeasibleBudget:
            return kDomain;
        case ErrorKind::SingularDesign:
        case ErrorKind::Numerical:
        case ErrorKind::StepSize:
        case ErrorKind::NoBracket:
        case ErrorKind::TrainingDivergence:
            return kNumerical;
        case ErrorKind::Structural: return kStructural;
        case ErrorKind::Parse: return kParse;
        case ErrorKind::Io: return kIo;
    }
    return kInternal;
}

struct Global {
    std::uint64_t seed = 1;
    std::string arch = "mlp";
    bool deterministic = false;
    std::string out = ".";
    std::optional<int> classes;
    std::vector<int> input;  // C,H,W (or a single C for the MLP)
};

struct DataOpts {
    std::string source = "auto";  // auto | blobs | textures | <file>
    std::uint64_t seed = 1;
    int train_per_class = 0;       // 0: generator default
    int validation_per_class = 0;
    double noise = -1.0;           // < 0: generator default
    int clusters = 0;              // blobs only; 0: generator default
};

// Collected while a command runs; written as run_manifest.json at the end.
struct Manifest {
    std::string command;
    std::vector<std::string> argv;
    Json config = Json::object();
    Json seeds = Json::object();
    Json artifacts = Json::object();
    Json result = Json::object();
    std::string started = utc_timestamp();
};

ArchSpec load_architecture(const Global& g) {
    const auto names = preset_names();
    const bool is_preset = std::find(names.begin(), names.end(), g.arch) != names.end();
    if (!is_preset) {
        require(!g.classes && g.input.empty(), ErrorKind::Domain,
                "--classes/--input only apply to presets; edit the architecture file instead");
        return resolve_arch(g.arch);
    }
    PresetOptions o;
    o.num_classes = g.classes;
    if (g.input.size() == 1) o.input = InputShape{g.input[0], 1, 1};
    else if (g.input.size() == 3) o.input = InputShape{g.input[0], g.input[1], g.input[2]};
    else require(g.input.empty(), ErrorKind::Domain, "--input takes C or C,H,W");
    return preset(g.arch, o);
}

Dataset load_data(const DataOpts& d, const ArchSpec& arch) {
    std::string src = d.source;
    if (src == "auto") src = (arch.input.height == 1 && arch.input.width == 1) ? "blobs" : "textures";
    Dataset data;
    if (src == "blobs") {
        require(arch.input.height == 1 && arch.input.width == 1, ErrorKind::Domain,
                "blobs are flat vectors; architecture '" + arch.name + "' expects " +
                    std::to_string(arch.input.channels) + "x" + std::to_string(arch.input.height) + "x" +
                    std::to_string(arch.input.width) + " inputs (use --data textures or a dataset file)");
        // Desk task: a mixture of 8 noisy clusters per class, so accuracy depends on capacity.
        BlobOptions o;
        o.num_classes = arch.num_classes;
        o.dim = arch.input.channels;
        o.seed = d.seed;
        o.train_per_class = d.train_per_class > 0 ? d.train_per_class : 200;
        if (d.validation_per_class > 0) o.validation_per_class = d.validation_per_class;
        o.noise = d.noise >= 0 ? d.noise : 2.0;
        o.clusters_per_class = d.clusters > 0 ? d.clusters : 8;
        data = make_blobs(o);
    } else if (src == "textures") {
        require(arch.input.height == arch.input.width && arch.input.height > 1, ErrorKind::Domain,
                "textures are square images; architecture '" + arch.name + "' does not take them");
        TextureOptions o;
        o.num_classes = arch.num_classes;
        o.channels = arch.input.channels;
        o.size = arch.input.height;
        o.seed = d.seed;
        if (d.train_per_class > 0) o.train_per_class = d.train_per_class;
        if (d.validation_per_class > 0) o.validation_per_class = d.validation_per_class;
        if (d.noise >= 0) o.noise = d.noise;
        data = make_textures(o);
    } else {
        data = load_dataset(src);
    }
    require(data.shape == arch.input, ErrorKind::Domain, "dataset sample shape does not match the architecture input");
    require(data.num_classes == arch.num_classes, ErrorKind::Domain,
            "dataset has " + std::to_string(data.num_classes) + " classes, architecture expects " +
                std::to_string(arch.num_classes));
    return data;
}

Json data_to_json(const DataOpts& d) {
    return {{"source", d.source},
            {"seed", d.seed},
            {"train_per_class", d.train_per_class},
            {"validation_per_class", d.validation_per_class},
            {"noise", d.noise},
            {"clusters", d.clusters}};
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Budgets may be written 1e6; they must still be whole numbers.
std::int64_t parse_budget(double v, const std::string& what) {
    require(std::isfinite(v) && v >= 1.0 && v == std::floor(v) && v < 9e18, ErrorKind::Domain,
            what + " must be a positive whole number of parameters");
    return static_cast<std::int64_t>(v);
}

WidthConfig parse_widths(const std::string& s) {
    if (fs::exists(s)) return load_widths(s);
    std::vector<int> w;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        require(used == item.size(), ErrorKind::Domain, "'" + s + "' is neither a widths file nor a list of integers");
        w.push_back(v);
    }
    return WidthConfig(std::move(w));
}

std::string millions(std::int64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2fM", static_cast<double>(n) / 1e6);
    return buf;
}

void add_prune_options(CLI::App* sub, PruneConfig& p) {
    sub->add_option("--pretrain-epochs", p.pretrain_epochs, "pre-training epochs P")->capture_default_str();
    sub->add_option("--pretrain-lr", p.pretrain_lr, "pre-training learning rate")->capture_default_str();
    sub->add_option("--prune-lr", p.prune_lr, "learning rate during pruning (default: continue the schedule)");
    sub->add_option("--momentum", p.momentum)->capture_default_str();
    sub->add_option("--weight-decay", p.weight_decay)->capture_default_str();
    sub->add_option("--batch-size", p.batch_size)->capture_default_str();
    sub->add_option("--q", p.q, "importance-accumulation iterations per prune step")->capture_default_str();
    sub->add_option("--k", p.k_absolute, "gates removed per step (0: use --k-fraction)")->capture_default_str();
    sub->add_option("--k-fraction", p.k_fraction, "gates removed per step as a fraction of the initial count")
        ->capture_default_str();
    sub->add_option("--eps", p.eps_fraction, "stop once alive gates fall below this fraction")->capture_default_str();
}

void add_data_options(CLI::App* sub, DataOpts& d) {
    sub->add_option("--data", d.source, "auto | blobs | textures | dataset file")->capture_default_str();
    sub->add_option("--data-seed", d.seed, "seed of the synthetic generator")->capture_default_str();
    sub->add_option("--train-per-class", d.train_per_class, "training samples per class (blobs default 200)");
    sub->add_option("--val-per-class", d.validation_per_class);
    sub->add_option("--noise", d.noise, "sample noise (blobs default 2)");
    sub->add_option("--clusters", d.clusters, "blob clusters per class (default 8)");
}

void add_tau_options(CLI::App* sub, TauDescentOpts& t, std::string& method) {
    sub->add_option("--tau-method", method, "bisection | paper-sgd | exact-sgd")->capture_default_str();
    sub->add_option("--eta", t.eta, "step size for the gradient modes");
    sub->add_option("--tau-iters", t.max_iters, "iteration cap for the tau search")->capture_default_str();
    sub->add_option("--rel-tol", t.rel_tol, "relative budget tolerance of the tau search")->capture_default_str();
}

struct DescendOpts {
    DescentConfig cfg;
    std::string tau_method = "bisection";
    std::optional<double> target;
    double ratio = 0.5;
};

void add_descend_options(CLI::App* sub, DescendOpts& o) {
    sub->add_option("--target", o.target, "parameter budget (default: count of the defaults at --ratio)");
    sub->add_option("--ratio", o.ratio, "uniform ratio defining the budget when --target is absent")
        ->capture_default_str();
    sub->add_option("--max-iters", o.cfg.max_iters, "descent iterations K")->capture_default_str();
    sub->add_option("--threshold", o.cfg.threshold, "convergence threshold on the relative width change")
        ->capture_default_str();
    sub->add_option("--patience", o.cfg.patience, "consecutive iterations under the threshold")
        ->capture_default_str();
    sub->add_option("--budget-tol", o.cfg.budget_tol, "tolerance every iteration must meet")->capture_default_str();
    add_prune_options(sub, o.cfg.prune);
    add_tau_options(sub, o.cfg.tau, o.tau_method);
}

std::int64_t resolve_target(const DescendOpts& o, const ArchSpec& arch) {
    if (o.target) return parse_budget(*o.target, "--target");
    require(o.ratio > 0.0, ErrorKind::Domain, "--ratio must be positive");
    return count_params(arch, uniform_widths(arch, o.ratio));
}

std::string widths_csv_rows(const std::string& prefix, const WidthConfig& w) {
    std::string s;
    for (std::size_t l = 0; l < w.size(); ++l) s += prefix + std::to_string(l + 1) + "," + std::to_string(w[l]) + "\n";
    return s;
}

// ---------------------------------------------------------------------------

int cmd_count(const Global& g, const std::optional<double>& ratio, const std::string& widths_arg, Manifest& m) {
    const auto arch = load_architecture(g);
    require(!(ratio && !widths_arg.empty()), ErrorKind::Domain, "give --ratio or --widths, not both");
    WidthConfig w = ratio ? uniform_widths(arch, *ratio)
                          : (widths_arg.empty() ? WidthConfig(arch.default_widths()) : parse_widths(widths_arg));
    const auto n = count_params(arch, w);
    std::cout << arch.name << ": " << n << " parameters (" << millions(n) << ")\n";
    std::cout << "widths:";
    for (int v : w.widths) std::cout << ' ' << v;
    std::cout << '\n';
    m.config["widths"] = w.widths;
    if (ratio) m.config["ratio"] = *ratio;
    m.result["params"] = n;
    return kOk;
}

int cmd_prune(const Global& g, PruneConfig cfg, const DataOpts& d, const std::string& widths_arg,
              const std::optional<double>& ratio, Manifest& m) {
    const auto arch = load_architecture(g);
    const auto data = load_data(d, arch);
    cfg.seed = g.seed;
    WidthConfig start = ratio ? uniform_widths(arch, *ratio)
                              : (widths_arg.empty() ? WidthConfig(arch.default_widths()) : parse_widths(widths_arg));
    m.config["prune"] = prune_config_to_json(cfg);
    m.config["data"] = data_to_json(d);
    m.config["start_widths"] = start.widths;
    m.seeds["prune"] = cfg.seed;

    const auto traj = iterative_prune(arch, start, data, cfg);
    const fs::path out(g.out);
    save_trajectory(traj, out / "trajectory.jsonl");
    std::string csv = "step,tau";
    for (int l = 1; l <= traj.num_layers; ++l) csv += ",phi_" + std::to_string(l);
    csv += "\n";
    for (const auto& r : traj.records) {
        csv += std::to_string(r.step) + "," + std::to_string(r.tau);
        for (int v : r.phi.widths) csv += "," + std::to_string(v);
        csv += "\n";
    }
    write_text_atomic(out / "trajectory.csv", csv);
    m.artifacts["trajectory"] = "trajectory.jsonl";
    m.artifacts["plot"] = "trajectory.csv";
    m.result["records"] = traj.records.size();
    std::cout << "pruning trajectory: " << traj.records.size() << " records -> " << (out / "trajectory.jsonl").string()
              << "\n";
    return kOk;
}

int cmd_fit(const Global& g, const std::string& traj_path, const std::string& solver, Manifest& m) {
    m.config["trajectory"] = fs::absolute(traj_path).string();
    m.config["solver"] = solver;
    const auto traj = load_trajectory(traj_path);
    SolveMethod method = SolveMethod::Auto;
    if (solver == "normal") method = SolveMethod::NormalEquations;
    else if (solver == "qr") method = SolveMethod::QR;
    else require(solver == "auto", ErrorKind::Domain, "--solver must be auto, normal or qr");
    const auto dm = build_design(traj);
    auto params = solve_theta(dm, method);
    params.arch_name = traj.arch_name;

    const fs::path out(g.out);
    save_params(params, out / "params.json");
    std::string csv = "tau,layer,phi,fitted\n";
    for (const auto& r : traj.records)
        for (std::size_t l = 0; l < r.phi.size(); ++l)
            csv += std::to_string(r.tau) + "," + std::to_string(l + 1) + "," + std::to_string(r.phi[l]) + "," +
                   std::to_string(predict_width(params, l, static_cast<double>(r.tau))) + "\n";
    write_text_atomic(out / "fit.csv", csv);
    m.artifacts["params"] = "params.json";
    m.artifacts["plot"] = "fit.csv";
    m.result["n"] = params.n;
    m.result["used_qr"] = params.used_qr;
    std::cout << "fitted " << params.size() << " layers from " << params.n << " records"
              << (params.used_qr ? " (QR)" : "") << "\n";
    for (std::size_t l = 0; l < params.size(); ++l)
        std::cout << "  layer " << l + 1 << ": alpha=" << params.alpha[l] << " beta=" << params.beta[l] << "\n";
    return kOk;
}

int cmd_scale(const Global& g, const std::string& params_path, double target_raw, TauDescentOpts opts,
              const std::string& method, Manifest& m) {
    m.config["params"] = fs::absolute(params_path).string();
    m.config["target"] = target_raw;
    m.config["tau"] = {{"method", method}, {"eta", opts.eta ? Json(*opts.eta) : Json(nullptr)},
                       {"max_iters", opts.max_iters}, {"rel_tol", opts.rel_tol}};
    const auto arch = load_architecture(g);
    auto params = load_params(params_path);
    require(static_cast<int>(params.size()) == arch.prunable_count(), ErrorKind::Structural,
            "parameters cover " + std::to_string(params.size()) + " layers, architecture '" + arch.name + "' has " +
                std::to_string(arch.prunable_count()));
    if (params.arch_name != arch.name)
        std::cerr << "warning: parameters were fitted on '" << params.arch_name << "', scaling '" << arch.name << "'\n";
    opts.method = tau_method_from_string(method);
    const auto target = parse_budget(target_raw, "--target");
    const auto sc = generate_widths(params, arch, target, opts);
    const fs::path out(g.out);
    save_widths(sc, arch, out / "widths.json");
    m.config["target"] = target;
    m.artifacts["widths"] = "widths.json";
    m.result = scaled_to_json(sc, arch);
    std::cout << arch.name << ": " << sc.achieved_params << " parameters for target " << target << " ("
              << sc.relative_error() * 100 << "% off, tau*=" << sc.tau_star << ")\n";
    std::cout << "widths:";
    for (int v : sc.widths.widths) std::cout << ' ' << v;
    std::cout << '\n';
    if (!sc.converged) {
        std::cerr << "error: the tau search did not reach the requested tolerance\n";
        return kNumerical;
    }
    return kOk;
}

DescentHistory run_descend(const ArchSpec& arch, const Dataset& data, std::int64_t target, DescendOpts o,
                           std::uint64_t seed, const fs::path& dir, Manifest& m, const std::string& key) {
    o.cfg.prune.seed = seed;
    o.cfg.tau.method = tau_method_from_string(o.tau_method);
    m.config[key] = descent_config_to_json(o.cfg);
    const auto h = architecture_descent(arch, data, target, o.cfg, dir);
    std::string csv = "iteration,layer,width\n";
    csv += widths_csv_rows("0,", h.initial);  // 0 = starting point
    for (const auto& it : h.iterations) csv += widths_csv_rows(std::to_string(it.index + 1) + ",", it.scaled.widths);
    write_text_atomic(dir / "widths_by_iteration.csv", csv);
    return h;
}

int cmd_descend(const Global& g, const DescendOpts& o, const DataOpts& d, Manifest& m) {
    const auto arch = load_architecture(g);
    const auto data = load_data(d, arch);
    const auto target = resolve_target(o, arch);
    m.config["target"] = target;
    m.config["data"] = data_to_json(d);
    m.seeds["base"] = g.seed;
    const fs::path out(g.out);
    const auto h = run_descend(arch, data, target, o, g.seed, out, m, "descent");
    m.artifacts["history"] = "manifest.json";
    m.artifacts["plot"] = "widths_by_iteration.csv";
    m.result["iterations"] = h.iterations.size();
    m.result["converged"] = h.converged;
    m.result["resumed_from"] = h.resumed_from;
    for (const auto& it : h.iterations)
        std::cout << "iteration " << it.index << " (seed " << it.seed << "): " << it.scaled.achieved_params
                  << " params, delta " << it.delta << "\n";
    std::cout << (h.converged ? "converged" : "stopped at the iteration cap") << " after " << h.iterations.size()
              << " iterations" << (h.resumed_from ? " (" + std::to_string(h.resumed_from) + " resumed)" : "") << "\n";
    return kOk;
}

int cmd_sweep(const Global& g, const DescendOpts& o, const DataOpts& d, const std::string& list, Manifest& m) {
    const auto arch = load_architecture(g);
    const auto data = load_data(d, arch);
    const auto target = resolve_target(o, arch);
    std::vector<int> ps;
    for (const auto& s : split_list(list)) {
        std::size_t used = 0;
        int p = -1;
        try {
            p = std::stoi(s, &used);
        } catch (const std::exception&) {
        }
        require(used == s.size() && p >= 0, ErrorKind::Domain, "--pretrain-list takes non-negative integers");
        ps.push_back(p);
    }
    require(!ps.empty(), ErrorKind::Domain, "--pretrain-list is empty");
    m.config["target"] = target;
    m.config["data"] = data_to_json(d);
    m.config["pretrain_list"] = ps;
    m.seeds["base"] = g.seed;
    const fs::path out(g.out);
    std::string csv = "pretrain_epochs,iteration,achieved_params,delta\n";
    Json summary = Json::array();
    for (int p : ps) {
        DescendOpts po = o;
        po.cfg.prune.pretrain_epochs = p;
        const std::string name = "P_" + std::to_string(p);
        const auto h = run_descend(arch, data, target, po, g.seed, out / name, m, name);
        for (const auto& it : h.iterations)
            csv += std::to_string(p) + "," + std::to_string(it.index) + "," +
                   std::to_string(it.scaled.achieved_params) + "," + std::to_string(it.delta) + "\n";
        summary.push_back({{"pretrain_epochs", p},
                           {"dir", name},
                           {"iterations", h.iterations.size()},
                           {"converged", h.converged},
                           {"final_widths", h.iterations.back().scaled.widths.widths}});
        std::cout << "P=" << p << ": " << h.iterations.size() << " iterations, final widths";
        for (int v : h.iterations.back().scaled.widths.widths) std::cout << ' ' << v;
        std::cout << "\n";
    }
    write_text_atomic(out / "sweep.csv", csv);
    m.artifacts["plot"] = "sweep.csv";
    m.result["runs"] = summary;
    return kOk;
}

struct CompareOpts {
    std::string budgets;
    std::string ratios;
    std::string methods = "uniform,morphnet-taylor,neuralscale-iter1,neuralscale-iterK";
    CompareConfig cfg;
    DescendOpts descend;
};

int cmd_compare(const Global& g, CompareOpts o, const DataOpts& d, Manifest& m) {
    const auto arch = load_architecture(g);
    const auto data = load_data(d, arch);
    auto& cfg = o.cfg;
    cfg.budgets.clear();
    for (const auto& s : split_list(o.budgets)) {
        double v = 0;
        try {
            v = std::stod(s);
        } catch (const std::exception&) {
            fail(ErrorKind::Domain, "bad budget '" + s + "'");
        }
        cfg.budgets.push_back(parse_budget(v, "budget"));
    }
    for (const auto& s : split_list(o.ratios)) {
        double r = 0;
        try {
            r = std::stod(s);
        } catch (const std::exception&) {
            fail(ErrorKind::Domain, "bad ratio '" + s + "'");
        }
        require(r > 0, ErrorKind::Domain, "ratios must be positive");
        cfg.budgets.push_back(count_params(arch, uniform_widths(arch, r)));
    }
    require(!cfg.budgets.empty(), ErrorKind::Domain, "compare needs --budgets or --ratios");
    cfg.methods.clear();
    for (const auto& s : split_list(o.methods)) cfg.methods.push_back(method_from_string(s));
    cfg.seed = g.seed;
    cfg.prune = o.descend.cfg.prune;
    cfg.prune.seed = g.seed;
    cfg.descent = o.descend.cfg;
    cfg.descent.tau.method = tau_method_from_string(o.descend.tau_method);
    if (g.deterministic) cfg.threads = 1;
    const fs::path out(g.out);
    cfg.descent_dir = out / "descent";

    const auto report = compare(arch, data, cfg);
    write_report(report, out);
    std::string csv = "method,budget,layer,width\n";
    for (const auto& r : report.rows)
        if (r.feasible) csv += widths_csv_rows(std::string(to_string(r.method)) + "," + std::to_string(r.budget) + ",", r.widths);
    write_text_atomic(out / "widths_by_method.csv", csv);

    m.config["compare"] = report.config;
    m.config["data"] = data_to_json(d);
    m.config["threads"] = cfg.threads;
    m.seeds["base"] = g.seed;
    m.artifacts["report"] = "report.json";
    m.artifacts["accuracy_plot"] = "accuracy_vs_params.csv";
    m.artifacts["widths_plot"] = "widths_by_method.csv";
    m.artifacts["descent"] = "descent";

    for (const auto& r : report.rows) {
        std::printf("%-18s budget %10lld  ", std::string(to_string(r.method)).c_str(), static_cast<long long>(r.budget));
        if (!r.feasible) {
            std::printf("infeasible: %s\n", r.error.c_str());
            continue;
        }
        std::printf("params %10lld  acc mean %.4f [%.4f, %.4f]\n", static_cast<long long>(r.achieved_params), r.mean,
                    r.min, r.max);
    }
    const Json q = qualitative_summary(report);
    m.result["qualitative"] = q;
    if (q.value("available", false))
        std::cout << "descriptive: neuralscale-iterK " << (q["holds"].get<bool>() ? ">=" : "<")
                  << " uniform at the smallest budget (" << q["neuralscale_iterK_mean"].get<double>() << " vs "
                  << q["uniform_mean"].get<double>() << ")\n";
    return kOk;
}

void write_manifest(const Global& g, const Manifest& m, const std::string& status, int code, const std::string& error) {
    Json j;
    j["schema"] = "neuralscale.run/1";
    j["tool_version"] = NEURALSCALE_VERSION;
    j["command"] = m.command;
    j["argv"] = m.argv;
    j["arch"] = g.arch;
    j["deterministic"] = g.deterministic;
    j["seed"] = g.seed;
    j["config"] = m.config;
    j["seeds"] = m.seeds;
    j["artifacts"] = m.artifacts;
    j["result"] = m.result;
    j["status"] = status;
    j["exit_code"] = code;
    if (!error.empty()) j["error"] = error;
    j["started_at"] = m.started;
    j["finished_at"] = utc_timestamp();
    fs::create_directories(g.out);
    write_json_atomic(fs::path(g.out) / "run_manifest.json", j);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NeuralScale: prune, fit and rescale layer widths under a parameter budget"};
    app.set_version_flag("--version", NEURALSCALE_VERSION);
    app.require_subcommand(1);
    app.fallthrough();

    Global g;
    app.add_option("--seed", g.seed, "base random seed")->capture_default_str();
    app.add_option("--arch", g.arch, "preset (" + [] {
        std::string s;
        for (const auto& n : preset_names()) s += (s.empty() ? "" : ", ") + n;
        return s;
    }() + ") or architecture file")->capture_default_str();
    app.add_flag("--deterministic", g.deterministic, "single-threaded, bit-reproducible execution");
    app.add_option("--out", g.out, "output directory")->capture_default_str();
    app.add_option("--classes", g.classes, "override the preset's class count");
    app.add_option("--input", g.input, "override the preset's input shape (C or C,H,W)")->delimiter(',');

    // count
    auto* count = app.add_subcommand("count", "parameter count of an architecture and width configuration");
    std::optional<double> count_ratio;
    std::string count_widths;
    count->add_option("--ratio", count_ratio, "uniform multiplier of the default widths");
    count->add_option("--widths", count_widths, "widths file or comma-separated list");

    // prune
    auto* prune = app.add_subcommand("prune", "iterative Taylor pruning -> trajectory file");
    PruneConfig prune_cfg;
    DataOpts prune_data;
    std::string prune_widths;
    std::optional<double> prune_ratio;
    add_prune_options(prune, prune_cfg);
    add_data_options(prune, prune_data);
    prune->add_option("--widths", prune_widths, "starting widths (file or list; default: preset defaults)");
    prune->add_option("--ratio", prune_ratio, "start from the defaults scaled by this ratio");

    // fit
    auto* fit = app.add_subcommand("fit", "power-law fit of a trajectory -> parameters file");
    std::string fit_traj, fit_solver = "auto";
    fit->add_option("--trajectory", fit_traj, "trajectory file")->required();
    fit->add_option("--solver", fit_solver, "auto | normal | qr")->capture_default_str();

    // scale
    auto* scale = app.add_subcommand("scale", "widths meeting a parameter budget -> widths file");
    std::string scale_params, scale_method = "bisection";
    double scale_target = 0;
    TauDescentOpts scale_opts;
    scale->add_option("--params", scale_params, "parameters file from fit")->required();
    scale->add_option("--target", scale_target, "parameter budget, e.g. 1e6")->required();
    add_tau_options(scale, scale_opts, scale_method);

    // descend
    auto* descend = app.add_subcommand("descend", "architecture descent -> history directory");
    DescendOpts descend_opts;
    DataOpts descend_data;
    add_descend_options(descend, descend_opts);
    add_data_options(descend, descend_data);

    // sweep-pretrain
    auto* sweep = app.add_subcommand("sweep-pretrain", "repeat descend for several pre-training lengths");
    DescendOpts sweep_opts;
    DataOpts sweep_data;
    std::string sweep_list = "0,5,10";
    add_descend_options(sweep, sweep_opts);
    add_data_options(sweep, sweep_data);
    sweep->add_option("--pretrain-list", sweep_list, "comma-separated pre-training epochs")->capture_default_str();

    // compare
    auto* cmp = app.add_subcommand("compare", "train every method at matched budgets -> report and CSVs");
    CompareOpts cmp_opts;
    DataOpts cmp_data;
    add_descend_options(cmp, cmp_opts.descend);
    add_data_options(cmp, cmp_data);
    cmp->add_option("--budgets", cmp_opts.budgets, "comma-separated parameter budgets");
    cmp->add_option("--ratios", cmp_opts.ratios, "comma-separated uniform ratios defining budgets");
    cmp->add_option("--methods", cmp_opts.methods, "comma-separated methods")->capture_default_str();
    cmp->add_option("--repeats", cmp_opts.cfg.repeats, "training repeats R per method and budget")
        ->capture_default_str();
    cmp->add_option("--train-epochs", cmp_opts.cfg.train.epochs)->capture_default_str();
    cmp->add_option("--train-lr", cmp_opts.cfg.train.learning_rate)->capture_default_str();
    cmp->add_option("--train-batch", cmp_opts.cfg.train.batch_size)->capture_default_str();
    cmp->add_option("--train-milestones", cmp_opts.cfg.train.lr_milestones, "epochs where the rate decays")
        ->delimiter(',');
    cmp->add_option("--threads", cmp_opts.cfg.threads, "worker threads (0: all cores)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    Manifest m;
    m.command = app.get_subcommands().front()->get_name();
    for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);

    int code = kOk;
    std::string error;
    try {
        fs::create_directories(g.out);
        if (*count) code = cmd_count(g, count_ratio, count_widths, m);
        else if (*prune) code = cmd_prune(g, prune_cfg, prune_data, prune_widths, prune_ratio, m);
        else if (*fit) code = cmd_fit(g, fit_traj, fit_solver, m);
        else if (*scale) code = cmd_scale(g, scale_params, scale_target, scale_opts, scale_method, m);
        else if (*descend) code = cmd_descend(g, descend_opts, descend_data, m);
        else if (*sweep) code = cmd_sweep(g, sweep_opts, sweep_data, sweep_list, m);
        else if (*cmp) code = cmd_compare(g, cmp_opts, cmp_data, m);
    } catch (const Error& e) {
        error = e.what();
        code = exit_code_for(e.kind());
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    } catch (const fs::filesystem_error& e) {
        error = e.what();
        code = kIo;
        std::cerr << "error (io): " << e.what() << "\n";
    } catch (const std::exception& e) {
        error = e.what();
        code = kInternal;
        std::cerr << "error: " << e.what() << "\n";
    }

    try {
        write_manifest(g, m, code == kOk ? "ok" : "failed", code, error);
    } catch (const std::exception& e) {
        std::cerr << "error: could not write run_manifest.json: " << e.what() << "\n";
        if (code == kOk) code = kIo;
    }
    return code;
}
