#include "neuralscale/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <thread>

#include "neuralscale/errors.hpp"

namespace neuralscale {

namespace {

struct Job {
    std::size_t cell;
    std::size_t repeat;
};

template <class F>
void parallel_for(std::size_t n, int threads, F&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&]() {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string_view to_string(Method m) {
    switch (m) {
        case Method::Uniform: return "uniform";
        case Method::MorphnetTaylor: return "morphnet-taylor";
        case Method::NeuralScaleIter1: return "neuralscale-iter1";
        case Method::NeuralScaleIterK: return "neuralscale-iterK";
    }
    return "?";
}

Method method_from_string(std::string_view s) {
    for (auto m : {Method::Uniform, Method::MorphnetTaylor, Method::NeuralScaleIter1, Method::NeuralScaleIterK})
        if (s == to_string(m)) return m;
    fail(ErrorKind::Domain, "unknown method '" + std::string(s) + "'");
}

MorphnetResult morphnet_prune(const ArchSpec& arch, const Dataset& data, const PruneConfig& cfg) {
    const WidthConfig start(arch.default_widths());
    MorphnetResult r;
    r.initial_gates = static_cast<int>(start.total());
    r.target_alive = std::max(arch.prunable_count(), (r.initial_gates + 1) / 2);
    const auto run = run_pruning(arch, start, data, cfg, r.target_alive);
    r.alive_gates = run.network.alive_gates();
    r.pruned = run.network.alive_widths();
    return r;
}

MorphnetResult morphnet_scale(MorphnetResult pruned, const ArchSpec& arch, std::int64_t tau_hat) {
    pruned.scaled = scale_to_budget(arch, pruned.pruned, tau_hat);
    return pruned;
}

MorphnetResult morphnet_taylor(const ArchSpec& arch, const Dataset& data, std::int64_t tau_hat,
                               const PruneConfig& cfg) {
    return morphnet_scale(morphnet_prune(arch, data, cfg), arch, tau_hat);
}

void CompareConfig::validate() const {
    require(!budgets.empty(), ErrorKind::Domain, "compare needs at least one budget");
    require(!methods.empty(), ErrorKind::Domain, "compare needs at least one method");
    require(repeats >= 1, ErrorKind::Domain, "repeats R must be >= 1");
    require(threads >= 0, ErrorKind::Domain, "threads must be >= 0");
    for (auto b : budgets) require(b >= 1, ErrorKind::Domain, "budgets must be positive");
    train.validate();
    prune.validate();
    descent.validate();
}

void aggregate(CellResult& cell) {
    if (cell.accuracies.empty()) return;
    double sum = 0.0;
    for (double a : cell.accuracies) sum += a;
    cell.mean = sum / static_cast<double>(cell.accuracies.size());
    cell.min = *std::min_element(cell.accuracies.begin(), cell.accuracies.end());
    cell.max = *std::max_element(cell.accuracies.begin(), cell.accuracies.end());
}

ComparisonReport compare(const ArchSpec& arch, const Dataset& data, const CompareConfig& cfg) {
    cfg.validate();
    validate_dataset(data);
    const int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const auto has = [&](Method m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end(); };

    ComparisonReport report;
    report.arch_name = arch.name;
    report.num_layers = static_cast<int>(arch.prunable_count());
    report.repeats = cfg.repeats;

    std::vector<std::int64_t> budgets = cfg.budgets;
    std::sort(budgets.begin(), budgets.end());
    budgets.erase(std::unique(budgets.begin(), budgets.end()), budgets.end());
    std::vector<Method> methods = cfg.methods;
    std::sort(methods.begin(), methods.end());
    methods.erase(std::unique(methods.begin(), methods.end()), methods.end());

    if (has(Method::MorphnetTaylor)) report.morphnet = morphnet_prune(arch, data, cfg.prune);

    // Descent histories, one per budget; iteration 1 and K both come from it.
    std::vector<std::optional<DescentHistory>> histories(budgets.size());
    std::vector<std::string> descent_errors(budgets.size());
    if (has(Method::NeuralScaleIter1) || has(Method::NeuralScaleIterK)) {
        parallel_for(budgets.size(), threads, [&](std::size_t b) {
            DescentConfig dc = cfg.descent;
            dc.prune = cfg.prune;
            std::optional<std::filesystem::path> dir;
            if (cfg.descent_dir) dir = *cfg.descent_dir / ("budget_" + std::to_string(budgets[b]));
            try {
                histories[b] = architecture_descent(arch, data, budgets[b], dc, dir);
            } catch (const Error& e) {
                descent_errors[b] = e.what();
            }
        });
    }

    for (std::size_t b = 0; b < budgets.size(); ++b) {
        for (Method m : methods) {
            CellResult cell;
            cell.method = m;
            cell.budget = budgets[b];
            try {
                switch (m) {
                    case Method::Uniform:
                        cell.widths = uniform_match(arch, budgets[b]).widths;
                        break;
                    case Method::MorphnetTaylor:
                        cell.widths = morphnet_scale(*report.morphnet, arch, budgets[b]).scaled.widths;
                        break;
                    case Method::NeuralScaleIter1:
                    case Method::NeuralScaleIterK:
                        if (!histories[b]) fail(ErrorKind::Numerical, descent_errors[b]);
                        cell.widths = m == Method::NeuralScaleIter1 ? histories[b]->iterations.front().scaled.widths
                                                                     : histories[b]->iterations.back().scaled.widths;
                        break;
                }
                cell.achieved_params = count_params(arch, cell.widths);
            } catch (const Error& e) {
                cell.feasible = false;
                cell.error = e.what();
            }
            report.rows.push_back(std::move(cell));
        }
    }

    std::vector<Job> jobs;
    for (std::size_t c = 0; c < report.rows.size(); ++c) {
        auto& cell = report.rows[c];
        if (!cell.feasible) continue;
        cell.accuracies.assign(cfg.repeats, 0.0);
        for (int r = 0; r < cfg.repeats; ++r) {
            cell.seeds.push_back(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
            jobs.push_back({c, static_cast<std::size_t>(r)});
        }
    }
    parallel_for(jobs.size(), threads, [&](std::size_t j) {
        auto& cell = report.rows[jobs[j].cell];
        const std::uint64_t seed = cell.seeds[jobs[j].repeat];
        Network net = init_network(arch, cell.widths, seed);
        TrainSchedule sched = cfg.train;
        sched.seed = derive_seed(seed, 7);
        sched.track_validation = true;
        const auto res = train(net, data, sched);
        double best = res.validation_accuracy.empty() ? evaluate(net, data).accuracy : 0.0;
        for (double a : res.validation_accuracy) best = std::max(best, a);
        cell.accuracies[jobs[j].repeat] = best;  // each slot written by exactly one job
    });
    for (auto& cell : report.rows) aggregate(cell);

    Json c;
    c["budgets"] = budgets;
    Json ms = Json::array();
    for (auto m : methods) ms.push_back(std::string(to_string(m)));
    c["methods"] = ms;
    c["repeats"] = cfg.repeats;
    c["seed"] = cfg.seed;
    c["train"] = {{"learning_rate", cfg.train.learning_rate}, {"momentum", cfg.train.momentum},
                  {"weight_decay", cfg.train.weight_decay},   {"epochs", cfg.train.epochs},
                  {"lr_milestones", cfg.train.lr_milestones}, {"lr_decay", cfg.train.lr_decay},
                  {"batch_size", cfg.train.batch_size}};
    c["prune"] = prune_config_to_json(cfg.prune);
    c["descent"] = descent_config_to_json(cfg.descent);
    report.config = c;
    return report;
}

Json qualitative_summary(const ComparisonReport& report) {
    Json j;
    j["claim"] = "neuralscale-iterK mean accuracy >= uniform mean accuracy at the smallest budget";
    std::optional<std::int64_t> smallest;
    for (const auto& r : report.rows)
        if (r.feasible && (!smallest || r.budget < *smallest)) smallest = r.budget;
    const CellResult* ns = nullptr;
    const CellResult* un = nullptr;
    for (const auto& r : report.rows) {
        if (!smallest || r.budget != *smallest || !r.feasible) continue;
        if (r.method == Method::NeuralScaleIterK) ns = &r;
        if (r.method == Method::Uniform) un = &r;
    }
    if (!ns || !un) {
        j["available"] = false;
        return j;
    }
    j["available"] = true;
    j["budget"] = *smallest;
    j["neuralscale_iterK_mean"] = ns->mean;
    j["uniform_mean"] = un->mean;
    j["holds"] = ns->mean >= un->mean;
    return j;
}

Json report_to_json(const ComparisonReport& report) {
    Json j;
    j["schema"] = "neuralscale.report/1";
    j["arch"] = report.arch_name;
    j["L"] = report.num_layers;
    j["repeats"] = report.repeats;
    j["config"] = report.config;
    if (report.morphnet) {
        j["morphnet"] = {{"initial_gates", report.morphnet->initial_gates},
                         {"target_alive", report.morphnet->target_alive},
                         {"alive_gates", report.morphnet->alive_gates},
                         {"pruned_widths", report.morphnet->pruned.widths}};
    }
    Json rows = Json::array();
    for (const auto& r : report.rows) {
        Json o;
        o["method"] = std::string(to_string(r.method));
        o["budget"] = r.budget;
        o["feasible"] = r.feasible;
        if (!r.feasible) {
            o["error"] = r.error;
        } else {
            o["widths"] = r.widths.widths;
            o["achieved_params"] = r.achieved_params;
            o["seeds"] = r.seeds;
            o["accuracies"] = r.accuracies;
            o["mean"] = r.mean;
            o["min"] = r.min;
            o["max"] = r.max;
        }
        rows.push_back(o);
    }
    j["rows"] = rows;
    j["qualitative"] = qualitative_summary(report);
    return j;
}

std::string report_csv(const ComparisonReport& report) {
    std::string out = "params,mean,min,max,method\n";
    for (const auto& r : report.rows) {
        if (!r.feasible) continue;
        out += std::to_string(r.achieved_params) + "," + format_double(r.mean) + "," + format_double(r.min) + "," +
               format_double(r.max) + "," + std::string(to_string(r.method)) + "\n";
    }
    return out;
}

void write_report(const ComparisonReport& report, const std::filesystem::path& dir) {
    write_json_atomic(dir / "report.json", report_to_json(report));
    write_text_atomic(dir / "accuracy_vs_params.csv", report_csv(report));
}

}  // namespace neuralscale
