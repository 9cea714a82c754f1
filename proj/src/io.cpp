#include "neuralscale/io.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "neuralscale/errors.hpp"

namespace neuralscale {

namespace {

void check_fields(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) fail(ErrorKind::Parse, where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || key == a;
        if (!known) fail(ErrorKind::Parse, where + ": unknown field '" + key + "'");
    }
}

template <class T>
T get_field(const Json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) fail(ErrorKind::Parse, where + ": missing field '" + key + "'");
    const Json& v = j.at(key);
    auto wrong = [&] { fail(ErrorKind::Parse, where + ": field '" + key + "' has the wrong type"); };
    // nlohmann would silently truncate 2.5 to 2; integers must be written as integers.
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) wrong();
        if constexpr (std::is_unsigned_v<T>)
            if (v.is_number_integer() && !v.is_number_unsigned()) wrong();
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
        if (!v.is_array()) wrong();
        for (const auto& e : v)
            if (!e.is_number_integer()) wrong();
    }
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(ErrorKind::Parse, where + ": field '" + key + "' has the wrong type");
    }
}

void check_schema(const Json& j, std::string_view expected, const std::string& where) {
    const auto got = get_field<std::string>(j, "schema", where);
    if (got != expected)
        fail(ErrorKind::Parse, where + ": schema '" + got + "' is not the supported '" + std::string(expected) + "'");
}

Json parse_json(std::string_view text, const std::string& where) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Parse, where + ": " + e.what());
    }
}

Json shape_to_json(const InputShape& s) { return {{"channels", s.channels}, {"height", s.height}, {"width", s.width}}; }

InputShape shape_from_json(const Json& j, const std::string& where) {
    check_fields(j, {"channels", "height", "width"}, where);
    InputShape s;
    s.channels = get_field<int>(j, "channels", where);
    s.height = j.contains("height") ? get_field<int>(j, "height", where) : 1;
    s.width = j.contains("width") ? get_field<int>(j, "width", where) : 1;
    return s;
}

template <class F>
auto parse_enum(F f, const std::string& text, const std::string& where) {
    try {
        return f(text);
    } catch (const Error& e) {
        fail(ErrorKind::Parse, where + ": " + e.what());
    }
}

}  // namespace

// --- architecture -------------------------------------------------------------------

Json arch_to_json(const ArchSpec& arch) {
    Json layers = Json::array();
    for (const auto& l : arch.layers) {
        Json o;
        o["kind"] = std::string(to_string(l.kind));
        if (l.kernel) o["kernel"] = {l.kernel->h, l.kernel->w};
        o["stride"] = l.stride;
        o["norm"] = l.has_norm_gate;
        if (l.block_id) o["block"] = *l.block_id;
        o["width_rule"] = std::string(to_string(l.width_rule));
        if (l.width_rule == WidthRule::Prunable) o["width"] = l.default_width;
        if (l.width_rule == WidthRule::ExpandInput) o["expand"] = l.expand;
        o["relu"] = l.relu;
        o["pool"] = l.pool_after;
        layers.push_back(o);
    }
    Json j;
    j["schema"] = std::string(kArchSchema);
    j["name"] = arch.name;
    j["family"] = std::string(to_string(arch.family));
    j["input"] = shape_to_json(arch.input);
    j["num_classes"] = arch.num_classes;
    if (arch.expansion_factor) j["expansion_factor"] = *arch.expansion_factor;
    j["layers"] = layers;
    return j;
}

ArchSpec arch_from_json(const Json& j) {
    const std::string where = "architecture";
    if (j.is_object() && j.contains("preset")) {
        check_fields(j, {"schema", "preset", "name", "input", "num_classes"}, where);
        if (j.contains("schema")) check_schema(j, kArchSchema, where);
        PresetOptions opts;
        if (j.contains("input")) opts.input = shape_from_json(j.at("input"), where + ".input");
        if (j.contains("num_classes")) opts.num_classes = get_field<int>(j, "num_classes", where);
        ArchSpec a = preset(get_field<std::string>(j, "preset", where), opts);
        if (j.contains("name")) a.name = get_field<std::string>(j, "name", where);
        validate_arch(a);
        return a;
    }
    check_fields(j, {"schema", "name", "family", "input", "num_classes", "expansion_factor", "layers"}, where);
    check_schema(j, kArchSchema, where);
    ArchSpec a;
    a.name = get_field<std::string>(j, "name", where);
    a.family = parse_enum(family_from_string, get_field<std::string>(j, "family", where), where);
    a.input = shape_from_json(j.at("input"), where + ".input");
    a.num_classes = get_field<int>(j, "num_classes", where);
    if (j.contains("expansion_factor")) a.expansion_factor = get_field<int>(j, "expansion_factor", where);
    const auto& layers = j.contains("layers") ? j.at("layers") : Json();
    if (!layers.is_array()) fail(ErrorKind::Parse, where + ": 'layers' must be an array");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& o = layers[i];
        const std::string lw = where + ".layers[" + std::to_string(i) + "]";
        check_fields(o, {"kind", "kernel", "stride", "norm", "block", "width_rule", "width", "expand", "relu", "pool"}, lw);
        LayerSpec l;
        l.kind = parse_enum(layer_kind_from_string, get_field<std::string>(o, "kind", lw), lw);
        if (o.contains("kernel")) {
            const auto k = get_field<std::vector<int>>(o, "kernel", lw);
            if (k.size() != 2) fail(ErrorKind::Parse, lw + ": kernel must be [h, w]");
            l.kernel = Kernel{k[0], k[1]};
        }
        if (o.contains("stride")) l.stride = get_field<int>(o, "stride", lw);
        if (o.contains("norm")) l.has_norm_gate = get_field<bool>(o, "norm", lw);
        if (o.contains("block")) l.block_id = get_field<int>(o, "block", lw);
        if (o.contains("width_rule"))
            l.width_rule = parse_enum(width_rule_from_string, get_field<std::string>(o, "width_rule", lw), lw);
        if (o.contains("width")) l.default_width = get_field<int>(o, "width", lw);
        if (o.contains("expand")) l.expand = get_field<int>(o, "expand", lw);
        if (o.contains("relu")) l.relu = get_field<bool>(o, "relu", lw);
        if (o.contains("pool")) l.pool_after = get_field<bool>(o, "pool", lw);
        a.layers.push_back(l);
    }
    validate_arch(a);
    return a;
}

ArchSpec load_arch_file(const std::filesystem::path& path) {
    return arch_from_json(parse_json(read_text(path), path.string()));
}

void save_arch_file(const ArchSpec& arch, const std::filesystem::path& path) {
    write_text_atomic(path, arch_to_json(arch).dump(2) + "\n");
}

ArchSpec resolve_arch(const std::string& name_or_path) {
    for (const auto& p : preset_names())
        if (p == name_or_path) return preset(p);
    if (!std::filesystem::exists(name_or_path))
        fail(ErrorKind::Domain, "'" + name_or_path + "' is neither a preset nor an architecture file");
    return load_arch_file(name_or_path);
}

// --- prune config -------------------------------------------------------------------

Json prune_config_to_json(const PruneConfig& c) {
    Json j;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["pretrain_lr"] = c.pretrain_lr;
    j["lr_decay"] = c.lr_decay;
    j["decay_every"] = c.decay_every;
    j["prune_lr"] = c.prune_lr ? Json(*c.prune_lr) : Json(nullptr);
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["batch_size"] = c.batch_size;
    j["q"] = c.q;
    j["k_absolute"] = c.k_absolute;
    j["k_fraction"] = c.k_fraction;
    j["eps_fraction"] = c.eps_fraction;
    j["seed"] = c.seed;
    return j;
}

PruneConfig prune_config_from_json(const Json& j) {
    const std::string w = "prune config";
    check_fields(j, {"pretrain_epochs", "pretrain_lr", "lr_decay", "decay_every", "prune_lr", "momentum", "weight_decay",
                     "batch_size", "q", "k_absolute", "k_fraction", "eps_fraction", "seed"},
                 w);
    PruneConfig c;
    if (j.contains("pretrain_epochs")) c.pretrain_epochs = get_field<int>(j, "pretrain_epochs", w);
    if (j.contains("pretrain_lr")) c.pretrain_lr = get_field<double>(j, "pretrain_lr", w);
    if (j.contains("lr_decay")) c.lr_decay = get_field<double>(j, "lr_decay", w);
    if (j.contains("decay_every")) c.decay_every = get_field<int>(j, "decay_every", w);
    if (j.contains("prune_lr") && !j.at("prune_lr").is_null()) c.prune_lr = get_field<double>(j, "prune_lr", w);
    if (j.contains("momentum")) c.momentum = get_field<double>(j, "momentum", w);
    if (j.contains("weight_decay")) c.weight_decay = get_field<double>(j, "weight_decay", w);
    if (j.contains("batch_size")) c.batch_size = get_field<int>(j, "batch_size", w);
    if (j.contains("q")) c.q = get_field<int>(j, "q", w);
    if (j.contains("k_absolute")) c.k_absolute = get_field<int>(j, "k_absolute", w);
    if (j.contains("k_fraction")) c.k_fraction = get_field<double>(j, "k_fraction", w);
    if (j.contains("eps_fraction")) c.eps_fraction = get_field<double>(j, "eps_fraction", w);
    if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", w);
    return c;
}

// --- trajectory ---------------------------------------------------------------------

std::string trajectory_to_text(const PruneTrajectory& traj) {
    std::string out;
    Json header;
    header["schema"] = std::string(kTrajectorySchema);
    header["arch"] = traj.arch_name;
    header["L"] = traj.num_layers;
    header["seed"] = traj.seed;
    header["config"] = prune_config_to_json(traj.config);
    out += header.dump() + "\n";
    for (const auto& r : traj.records) {
        require(static_cast<int>(r.phi.size()) == traj.num_layers, ErrorKind::Structural,
                "trajectory record width count differs from L");
        Json rec;
        rec["step"] = r.step;
        rec["tau"] = r.tau;
        rec["phi"] = r.phi.widths;
        out += rec.dump() + "\n";
    }
    Json end;
    end["end"] = true;
    end["records"] = traj.records.size();
    out += end.dump() + "\n";
    return out;
}

PruneTrajectory trajectory_from_text(std::string_view text) {
    std::vector<std::string> lines;
    {
        std::string s(text);
        std::istringstream in(s);
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
    }
    while (!lines.empty() && lines.back().find_first_not_of(" \t\r") == std::string::npos) lines.pop_back();
    if (lines.empty()) throw ParseError(1, "empty trajectory file (missing header)");

    auto parse_line = [&](std::size_t idx) {
        try {
            return Json::parse(lines[idx]);
        } catch (const nlohmann::json::parse_error&) {
            throw ParseError(idx + 1, "malformed JSON");
        }
    };

    PruneTrajectory t;
    {
        const Json h = parse_line(0);
        try {
            check_fields(h, {"schema", "arch", "L", "seed", "config"}, "header");
            check_schema(h, kTrajectorySchema, "header");
            t.arch_name = get_field<std::string>(h, "arch", "header");
            t.num_layers = get_field<int>(h, "L", "header");
            t.seed = get_field<std::uint64_t>(h, "seed", "header");
            if (h.contains("config")) t.config = prune_config_from_json(h.at("config"));
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(1, e.what());
        }
        if (t.num_layers < 1) throw ParseError(1, "L must be >= 1");
    }

    bool ended = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (ended) throw ParseError(i + 1, "content after the end marker");
        const Json j = parse_line(i);
        if (!j.is_object()) throw ParseError(i + 1, "expected an object");
        if (j.contains("end")) {
            if (!j.contains("records") || !j.at("records").is_number_unsigned())
                throw ParseError(i + 1, "end marker without a record count");
            if (j.at("records").get<std::size_t>() != t.records.size())
                throw ParseError(i + 1, "end marker counts " + std::to_string(j.at("records").get<std::size_t>()) +
                                            " records, file has " + std::to_string(t.records.size()));
            ended = true;
            continue;
        }
        const std::set<std::string> keys{"step", "tau", "phi"};
        for (const auto& [k, _] : j.items())
            if (!keys.count(k)) throw ParseError(i + 1, "unknown field '" + k + "'");
        if (!j.contains("step") || !j.at("step").is_number_integer()) throw ParseError(i + 1, "missing integer 'step'");
        if (!j.contains("tau") || !j.at("tau").is_number_integer()) throw ParseError(i + 1, "missing integer 'tau'");
        if (!j.contains("phi") || !j.at("phi").is_array()) throw ParseError(i + 1, "missing array 'phi'");
        TrajectoryRecord r;
        r.step = j.at("step").get<int>();
        r.tau = j.at("tau").get<std::int64_t>();
        for (const auto& v : j.at("phi")) {
            if (!v.is_number_integer()) throw ParseError(i + 1, "phi entries must be integers");
            r.phi.widths.push_back(v.get<int>());
        }
        if (static_cast<int>(r.phi.size()) != t.num_layers)
            throw ParseError(i + 1, "phi has " + std::to_string(r.phi.size()) + " entries but the header declares L=" +
                                        std::to_string(t.num_layers));
        t.records.push_back(std::move(r));
    }
    if (!ended) throw ParseError(lines.size() + 1, "truncated trajectory: missing end marker");
    return t;
}

void save_trajectory(const PruneTrajectory& traj, const std::filesystem::path& path) {
    write_text_atomic(path, trajectory_to_text(traj));
}

PruneTrajectory load_trajectory(const std::filesystem::path& path) { return trajectory_from_text(read_text(path)); }

// --- scaling params and widths ------------------------------------------------------

Json params_to_json(const ScalingParams& p) {
    Json j;
    j["schema"] = std::string(kParamsSchema);
    j["arch"] = p.arch_name;
    j["L"] = p.size();
    j["alpha"] = p.alpha;
    j["beta"] = p.beta;
    j["rss"] = p.rss;
    j["n"] = p.n;
    j["used_qr"] = p.used_qr;
    return j;
}

ScalingParams params_from_json(const Json& j) {
    const std::string w = "scaling params";
    check_fields(j, {"schema", "arch", "L", "alpha", "beta", "rss", "n", "used_qr"}, w);
    check_schema(j, kParamsSchema, w);
    ScalingParams p;
    p.arch_name = get_field<std::string>(j, "arch", w);
    const auto layers = get_field<std::size_t>(j, "L", w);
    p.alpha = get_field<std::vector<double>>(j, "alpha", w);
    p.beta = get_field<std::vector<double>>(j, "beta", w);
    if (j.contains("rss")) p.rss = get_field<std::vector<double>>(j, "rss", w);
    if (j.contains("n")) p.n = get_field<int>(j, "n", w);
    if (j.contains("used_qr")) p.used_qr = get_field<bool>(j, "used_qr", w);
    if (p.alpha.size() != layers || p.beta.size() != layers)
        fail(ErrorKind::Parse, w + ": alpha/beta lengths differ from L");
    return p;
}

void save_params(const ScalingParams& params, const std::filesystem::path& path) {
    write_text_atomic(path, params_to_json(params).dump(2) + "\n");
}

ScalingParams load_params(const std::filesystem::path& path) {
    return params_from_json(parse_json(read_text(path), path.string()));
}

Json scaled_to_json(const ScaledConfig& sc, const ArchSpec& arch) {
    Json j;
    j["schema"] = std::string(kWidthsSchema);
    j["arch"] = arch.name;
    j["L"] = sc.widths.size();
    j["widths"] = sc.widths.widths;
    j["achieved_params"] = sc.achieved_params;
    j["target"] = sc.target;
    j["tau_star"] = sc.tau_star;
    j["iterations"] = sc.iterations_used;
    j["converged"] = sc.converged;
    return j;
}

void save_widths(const ScaledConfig& sc, const ArchSpec& arch, const std::filesystem::path& path) {
    write_text_atomic(path, scaled_to_json(sc, arch).dump(2) + "\n");
}

namespace {

std::vector<int> strict_int_array(const Json& j, const std::string& where) {
    if (!j.is_array()) fail(ErrorKind::Parse, where + ": widths must be an array");
    std::vector<int> out;
    for (const auto& v : j) {
        if (!v.is_number_integer()) fail(ErrorKind::Parse, where + ": widths must be integers");
        out.push_back(v.get<int>());
    }
    return out;
}

}  // namespace

WidthConfig load_widths(const std::filesystem::path& path) {
    const std::string w = path.string();
    const Json j = parse_json(read_text(path), w);
    if (j.is_array()) return WidthConfig(strict_int_array(j, w));
    check_fields(j, {"schema", "arch", "L", "widths", "achieved_params", "target", "tau_star", "iterations", "converged"},
                 w);
    check_schema(j, kWidthsSchema, w);
    if (!j.contains("widths")) fail(ErrorKind::Parse, w + ": missing field 'widths'");
    WidthConfig out(strict_int_array(j.at("widths"), w));
    if (j.contains("L") && get_field<std::size_t>(j, "L", w) != out.size())
        fail(ErrorKind::Parse, w + ": widths length differs from L");
    return out;
}

// --- files --------------------------------------------------------------------------

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json(const std::filesystem::path& path) { return parse_json(read_text(path), path.string()); }

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot open '" + tmp.string() + "' for writing");
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) fail(ErrorKind::Io, "write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorKind::Io, "cannot move '" + tmp.string() + "' into place: " + ec.message());
}

void write_json_atomic(const std::filesystem::path& path, const Json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace neuralscale
