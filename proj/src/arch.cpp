#include "neuralscale/arch.hpp"

#include <cmath>
#include <set>

#include "neuralscale/errors.hpp"

namespace neuralscale {

std::string_view to_string(Family f) {
    switch (f) {
        case Family::FeedforwardConv: return "feedforward-conv";
        case Family::Residual: return "residual";
        case Family::InvertedBottleneck: return "inverted-bottleneck";
        case Family::Dense: return "dense";
    }
    return "?";
}

std::string_view to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Depthwise: return "depthwise-conv";
        case LayerKind::Pointwise: return "pointwise-conv";
        case LayerKind::Dense: return "dense";
    }
    return "?";
}

std::string_view to_string(WidthRule r) {
    switch (r) {
        case WidthRule::Prunable: return "prunable";
        case WidthRule::SameAsInput: return "same-as-input";
        case WidthRule::ExpandInput: return "expand-input";
    }
    return "?";
}

std::string_view to_string(ShortcutKind s) {
    return s == ShortcutKind::Identity ? "identity" : "conv1x1";
}

Family family_from_string(std::string_view s) {
    for (auto f : {Family::FeedforwardConv, Family::Residual, Family::InvertedBottleneck, Family::Dense})
        if (to_string(f) == s) return f;
    fail(ErrorKind::Parse, "unknown family '" + std::string(s) + "'");
}

LayerKind layer_kind_from_string(std::string_view s) {
    for (auto k : {LayerKind::Conv, LayerKind::Depthwise, LayerKind::Pointwise, LayerKind::Dense})
        if (to_string(k) == s) return k;
    fail(ErrorKind::Parse, "unknown layer kind '" + std::string(s) + "'");
}

WidthRule width_rule_from_string(std::string_view s) {
    for (auto r : {WidthRule::Prunable, WidthRule::SameAsInput, WidthRule::ExpandInput})
        if (to_string(r) == s) return r;
    fail(ErrorKind::Parse, "unknown width rule '" + std::string(s) + "'");
}

// ArchSpec ------------------------------------------------------------------

int ArchSpec::prunable_count() const {
    int n = 0;
    for (const auto& l : layers)
        if (l.width_rule == WidthRule::Prunable) ++n;
    return n;
}

std::vector<int> ArchSpec::prunable_layers() const {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i)
        if (layers[i].width_rule == WidthRule::Prunable) idx.push_back(i);
    return idx;
}

std::vector<int> ArchSpec::default_widths() const {
    std::vector<int> w;
    for (const auto& l : layers)
        if (l.width_rule == WidthRule::Prunable) w.push_back(l.default_width);
    return w;
}

std::vector<Block> ArchSpec::blocks() const {
    std::vector<Block> out;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
        const auto& id = layers[i].block_id;
        if (!id) continue;
        if (!out.empty() && out.back().last == i - 1 && layers[i - 1].block_id == id) {
            out.back().last = i;
            out.back().stride *= layers[i].stride;
        } else {
            out.push_back({i, i, layers[i].stride});
        }
    }
    return out;
}

static bool is_conv_kind(LayerKind k) { return k != LayerKind::Dense; }

void validate_arch(const ArchSpec& arch) {
    auto bad = [&](const std::string& msg) { fail(ErrorKind::Structural, "arch '" + arch.name + "': " + msg); };
    if (arch.layers.empty()) bad("no layers");
    if (arch.num_classes < 1) bad("num_classes must be positive");
    if (arch.input.channels < 1 || arch.input.height < 1 || arch.input.width < 1) bad("input shape must be positive");
    if (arch.prunable_count() < 1) bad("at least one prunable layer required");
    if (arch.expansion_factor.has_value() != (arch.family == Family::InvertedBottleneck))
        bad("expansion_factor present iff family is inverted-bottleneck");
    if (arch.expansion_factor && *arch.expansion_factor < 1) bad("expansion_factor must be positive");
    if (arch.family == Family::Dense && (arch.input.height != 1 || arch.input.width != 1))
        bad("dense family takes a flat feature input");

    std::set<int> seen_blocks;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        const std::string at = "layer " + std::to_string(i) + ": ";
        if (l.kernel.has_value() != is_conv_kind(l.kind)) bad(at + "kernel present iff conv kind");
        if (l.kernel && (l.kernel->h < 1 || l.kernel->w < 1)) bad(at + "kernel must be positive");
        if (l.kind == LayerKind::Pointwise && !(l.kernel == Kernel{1, 1})) bad(at + "pointwise kernel must be 1x1");
        if ((l.kind == LayerKind::Dense) != (arch.family == Family::Dense))
            bad(at + "dense layers only (and always) in the dense family");
        if (l.stride < 1) bad(at + "stride must be positive");
        if (l.kind == LayerKind::Dense && l.stride != 1) bad(at + "dense layers have stride 1");
        if ((l.kind == LayerKind::Depthwise) != (l.width_rule == WidthRule::SameAsInput))
            bad(at + "depthwise layers keep their input width");
        if (l.width_rule == WidthRule::Prunable && l.default_width < 1) bad(at + "default width must be positive");
        if (l.width_rule == WidthRule::ExpandInput) {
            if (arch.family != Family::InvertedBottleneck) bad(at + "expand-input only in inverted-bottleneck family");
            if (l.expand < 1) bad(at + "expand must be positive");
        }
        if (l.pool_after && l.kind == LayerKind::Dense) bad(at + "pooling needs a spatial layer");
        if (l.block_id) {
            if (!arch.has_blocks()) bad(at + "block ids only in residual / inverted-bottleneck families");
            const bool continues = i > 0 && arch.layers[i - 1].block_id == l.block_id;
            if (!continues && !seen_blocks.insert(*l.block_id).second) bad(at + "block ids must be contiguous");
        }
    }
}

std::int64_t WidthConfig::total() const {
    std::int64_t s = 0;
    for (int w : widths) s += w;
    return s;
}

ValidationReport validate_widths(const ArchSpec& arch, const WidthConfig& widths) {
    ValidationReport report;
    const auto expected = static_cast<std::size_t>(arch.prunable_count());
    if (widths.size() != expected) {
        report.violations.push_back({WidthViolation::Kind::LengthMismatch, std::nullopt,
                                     "expected " + std::to_string(expected) + " widths, got " +
                                         std::to_string(widths.size())});
    }
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] < 1) {
            report.violations.push_back({WidthViolation::Kind::NonPositive, static_cast<int>(i),
                                         "layer " + std::to_string(i) + " has width " +
                                             std::to_string(widths[i]) + " (< 1)"});
        }
    }
    return report;
}

void check_widths(const ArchSpec& arch, const WidthConfig& widths) {
    const auto report = validate_widths(arch, widths);
    for (const auto& v : report.violations)
        if (v.kind == WidthViolation::Kind::LengthMismatch) fail(ErrorKind::Structural, v.message);
    if (!report.ok()) fail(ErrorKind::Domain, report.violations.front().message);
}

namespace {

// Forward-mode dual number; comparisons use the value part only.
struct Dual {
    double v = 0.0;
    double d = 0.0;
    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT(google-explicit-constructor)
    Dual(double value, double deriv) : v(value), d(deriv) {}
    friend Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
    friend Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
    friend bool operator==(Dual a, Dual b) { return a.v == b.v; }
};

template <class T>
std::vector<T> resolve_widths(const ArchSpec& arch, std::span<const T> phi) {
    std::vector<T> out;
    out.reserve(arch.layers.size());
    T in = T(arch.input.channels);
    std::size_t slot = 0;
    for (const auto& l : arch.layers) {
        T w;
        switch (l.width_rule) {
            case WidthRule::Prunable: w = phi[slot++]; break;
            case WidthRule::SameAsInput: w = in; break;
            case WidthRule::ExpandInput: w = T(l.expand) * in; break;
        }
        out.push_back(w);
        in = w;
    }
    return out;
}

template <class T>
T count_impl(const ArchSpec& arch, std::span<const T> phi) {
    const auto widths = resolve_widths<T>(arch, phi);
    const auto blocks = arch.blocks();
    std::size_t next_block = 0;

    T total = T(0);
    T in = T(arch.input.channels);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        const T out = widths[i];
        switch (l.kind) {
            case LayerKind::Conv:
            case LayerKind::Pointwise: total = total + T(l.kernel->h * l.kernel->w) * in * out; break;
            case LayerKind::Depthwise: total = total + T(l.kernel->h * l.kernel->w) * out; break;
            case LayerKind::Dense: total = total + in * out + out; break;
        }
        if (l.has_norm_gate) total = total + T(2) * out;

        if (next_block < blocks.size() && blocks[next_block].last == static_cast<int>(i)) {
            const auto& b = blocks[next_block++];
            const T block_in = b.first == 0 ? T(arch.input.channels) : widths[b.first - 1];
            if (!(block_in == out && b.stride == 1)) {
                total = total + block_in * out;
                if (l.has_norm_gate) total = total + T(2) * out;
            }
        }
        in = out;
    }
    total = total + in * T(arch.num_classes) + T(arch.num_classes);
    return total;
}

}  // namespace

std::vector<int> layer_widths(const ArchSpec& arch, const WidthConfig& widths) {
    check_widths(arch, widths);
    return resolve_widths<int>(arch, std::span<const int>(widths.widths));
}

std::int64_t count_params(const ArchSpec& arch, const WidthConfig& widths) {
    check_widths(arch, widths);
    std::vector<std::int64_t> phi(widths.widths.begin(), widths.widths.end());
    return count_impl<std::int64_t>(arch, std::span<const std::int64_t>(phi));
}

double count_params_real(const ArchSpec& arch, std::span<const double> widths) {
    require(widths.size() == static_cast<std::size_t>(arch.prunable_count()), ErrorKind::Structural,
            "width vector length mismatch");
    for (double w : widths) require(std::isfinite(w) && w > 0.0, ErrorKind::Domain, "real widths must be positive");
    return count_impl<double>(arch, widths);
}

std::vector<double> count_params_gradient(const ArchSpec& arch, std::span<const double> widths) {
    require(widths.size() == static_cast<std::size_t>(arch.prunable_count()), ErrorKind::Structural,
            "width vector length mismatch");
    std::vector<double> grad(widths.size());
    std::vector<Dual> phi(widths.begin(), widths.end());
    for (std::size_t l = 0; l < widths.size(); ++l) {
        phi[l].d = 1.0;
        grad[l] = count_impl<Dual>(arch, std::span<const Dual>(phi)).d;
        phi[l].d = 0.0;
    }
    return grad;
}

std::int64_t shortcut_params(const ArchSpec& arch, const Block& block, std::int64_t in_width, std::int64_t out_width) {
    std::int64_t p = in_width * out_width;
    if (arch.layers[block.last].has_norm_gate) p += 2 * out_width;
    return p;
}

WidthConfig uniform_widths(const ArchSpec& arch, double ratio) {
    require(std::isfinite(ratio) && ratio > 0.0, ErrorKind::Domain, "ratio must be positive");
    std::vector<int> w;
    for (int d : arch.default_widths()) {
        const double scaled = std::round(static_cast<double>(d) * ratio);  // half away from zero
        w.push_back(scaled < 1.0 ? 1 : static_cast<int>(scaled));
    }
    return WidthConfig(std::move(w));
}

std::vector<ShortcutKind> resolve_shortcuts(const ArchSpec& arch, const WidthConfig& widths) {
    require(arch.has_blocks(), ErrorKind::Structural,
            "shortcuts exist only in residual / inverted-bottleneck families");
    const auto w = layer_widths(arch, widths);
    std::vector<ShortcutKind> kinds;
    for (const auto& b : arch.blocks()) {
        const int in = b.first == 0 ? arch.input.channels : w[b.first - 1];
        kinds.push_back(in == w[b.last] && b.stride == 1 ? ShortcutKind::Identity : ShortcutKind::Conv1x1);
    }
    return kinds;
}

// Presets ---------------------------------------------------------------------

namespace {

LayerSpec conv3x3(int width, int stride = 1) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.kernel = Kernel{3, 3};
    l.stride = stride;
    l.default_width = width;
    return l;
}

}  // namespace

ArchSpec vgg11(InputShape input, int num_classes) {
    ArchSpec a;
    a.name = "vgg11";
    a.family = Family::FeedforwardConv;
    a.input = input;
    a.num_classes = num_classes;
    const int widths[] = {64, 128, 256, 256, 512, 512, 512, 512};
    const bool pool[] = {true, true, false, true, false, true, false, true};
    for (int i = 0; i < 8; ++i) {
        auto l = conv3x3(widths[i]);
        l.pool_after = pool[i];
        a.layers.push_back(l);
    }
    validate_arch(a);
    return a;
}

ArchSpec resnet18(InputShape input, int num_classes) {
    ArchSpec a;
    a.name = "resnet18";
    a.family = Family::Residual;
    a.input = input;
    a.num_classes = num_classes;
    a.layers.push_back(conv3x3(64));
    const int planes[] = {64, 128, 256, 512};
    const int strides[] = {1, 2, 2, 2};
    int block = 0;
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < 2; ++b, ++block) {
            auto c1 = conv3x3(planes[s], b == 0 ? strides[s] : 1);
            auto c2 = conv3x3(planes[s]);
            c1.block_id = block;
            c2.block_id = block;
            a.layers.push_back(c1);
            a.layers.push_back(c2);
        }
    }
    validate_arch(a);
    return a;
}

ArchSpec mobilenetv2(InputShape input, int num_classes) {
    ArchSpec a;
    a.name = "mobilenetv2";
    a.family = Family::InvertedBottleneck;
    a.input = input;
    a.num_classes = num_classes;
    a.expansion_factor = 6;
    a.layers.push_back(conv3x3(32));

    struct Stage { int expand, out, repeat, stride; };
    const Stage stages[] = {{1, 16, 1, 1},  {6, 24, 2, 1},  {6, 32, 3, 2},  {6, 64, 4, 2},
                            {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
    int block = 0;
    for (const auto& st : stages) {
        for (int r = 0; r < st.repeat; ++r, ++block) {
            LayerSpec expand;
            expand.kind = LayerKind::Pointwise;
            expand.kernel = Kernel{1, 1};
            expand.width_rule = WidthRule::ExpandInput;
            expand.expand = st.expand;
            expand.block_id = block;

            LayerSpec dw;
            dw.kind = LayerKind::Depthwise;
            dw.kernel = Kernel{3, 3};
            dw.stride = r == 0 ? st.stride : 1;
            dw.width_rule = WidthRule::SameAsInput;
            dw.block_id = block;

            LayerSpec project;
            project.kind = LayerKind::Pointwise;
            project.kernel = Kernel{1, 1};
            project.default_width = st.out;
            project.relu = false;  // linear bottleneck
            project.block_id = block;

            a.layers.push_back(expand);
            a.layers.push_back(dw);
            a.layers.push_back(project);
        }
    }
    LayerSpec head;
    head.kind = LayerKind::Pointwise;
    head.kernel = Kernel{1, 1};
    head.default_width = 1280;
    a.layers.push_back(head);
    validate_arch(a);
    return a;
}

ArchSpec mlp(int input_dim, std::vector<int> hidden, int num_classes, bool norm) {
    ArchSpec a;
    a.name = "mlp";
    a.family = Family::Dense;
    a.input = {input_dim, 1, 1};
    a.num_classes = num_classes;
    for (int w : hidden) {
        LayerSpec l;
        l.kind = LayerKind::Dense;
        l.has_norm_gate = norm;
        l.default_width = w;
        a.layers.push_back(l);
    }
    validate_arch(a);
    return a;
}

ArchSpec preset(std::string_view name, const PresetOptions& opts) {
    if (name == "vgg11") return vgg11(opts.input.value_or(InputShape{3, 32, 32}), opts.num_classes.value_or(10));
    if (name == "resnet18")
        return resnet18(opts.input.value_or(InputShape{3, 64, 64}), opts.num_classes.value_or(200));
    if (name == "mobilenetv2")
        return mobilenetv2(opts.input.value_or(InputShape{3, 32, 32}), opts.num_classes.value_or(100));
    if (name == "mlp")
        return mlp(opts.input ? opts.input->channels : 16, {120, 80}, opts.num_classes.value_or(4));
    fail(ErrorKind::Domain, "unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() { return {"vgg11", "resnet18", "mobilenetv2", "mlp"}; }

}  // namespace neuralscale
