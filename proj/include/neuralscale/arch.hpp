#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace neuralscale {

enum class Family { FeedforwardConv, Residual, InvertedBottleneck, Dense };
enum class LayerKind { Conv, Depthwise, Pointwise, Dense };
enum class ShortcutKind { Identity, Conv1x1 };

// How a layer's output width is obtained from a WidthConfig.
enum class WidthRule {
    Prunable,     // one entry of the WidthConfig
    SameAsInput,  // depthwise layers
    ExpandInput,  // inverted-bottleneck expansion: expand * input width
};

std::string_view to_string(Family f);
std::string_view to_string(LayerKind k);
std::string_view to_string(WidthRule r);
std::string_view to_string(ShortcutKind s);
Family family_from_string(std::string_view s);
LayerKind layer_kind_from_string(std::string_view s);
WidthRule width_rule_from_string(std::string_view s);

struct Kernel {
    int h = 1;
    int w = 1;
    bool operator==(const Kernel&) const = default;
};

struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    std::optional<Kernel> kernel;  // present iff kind is a conv kind
    int stride = 1;
    bool has_norm_gate = true;     // normalization after the layer (the gate is always present)
    std::optional<int> block_id;   // contiguous runs sharing an id form one residual block
    WidthRule width_rule = WidthRule::Prunable;
    int default_width = 0;         // prunable layers only
    int expand = 1;                // ExpandInput only
    bool relu = true;
    bool pool_after = false;       // 2x2 max-pool after the activation

    bool operator==(const LayerSpec&) const = default;
};

struct InputShape {
    int channels = 1;  // feature dimension for the dense family
    int height = 1;
    int width = 1;
    bool operator==(const InputShape&) const = default;
};

struct Block {
    int first = 0;  // layer index range [first, last]
    int last = 0;
    int stride = 1;  // product of layer strides in the block
};

// Immutable architecture family description. Widths are supplied separately.
struct ArchSpec {
    std::string name;
    Family family = Family::Dense;
    std::vector<LayerSpec> layers;
    InputShape input;
    int num_classes = 2;
    std::optional<int> expansion_factor;

    bool operator==(const ArchSpec&) const = default;

    int prunable_count() const;
    std::vector<int> prunable_layers() const;  // layer index of each prunable slot
    std::vector<int> default_widths() const;
    std::vector<Block> blocks() const;
    bool has_blocks() const { return family == Family::Residual || family == Family::InvertedBottleneck; }
};

// Throws Error(Structural) when the spec violates its invariants.
void validate_arch(const ArchSpec& arch);

struct WidthConfig {
    std::vector<int> widths;

    WidthConfig() = default;
    explicit WidthConfig(std::vector<int> w) : widths(std::move(w)) {}

    std::size_t size() const { return widths.size(); }
    int operator[](std::size_t i) const { return widths[i]; }
    std::int64_t total() const;
    bool operator==(const WidthConfig&) const = default;
};

struct WidthViolation {
    enum class Kind { LengthMismatch, NonPositive } kind;
    std::optional<int> layer;  // prunable slot index
    std::string message;
};

struct ValidationReport {
    std::vector<WidthViolation> violations;
    bool ok() const { return violations.empty(); }
};

ValidationReport validate_widths(const ArchSpec& arch, const WidthConfig& widths);

// Throws Structural on length mismatch, Domain on non-positive entries.
void check_widths(const ArchSpec& arch, const WidthConfig& widths);

// Output width of every layer (prunable and derived) for a given config.
std::vector<int> layer_widths(const ArchSpec& arch, const WidthConfig& widths);

// Exact total parameter count h(phi).
std::int64_t count_params(const ArchSpec& arch, const WidthConfig& widths);

// h on real-valued widths; same formula, used inside the budget descent.
double count_params_real(const ArchSpec& arch, std::span<const double> widths);

// Analytic dh/dphi_l on real-valued widths.
std::vector<double> count_params_gradient(const ArchSpec& arch, std::span<const double> widths);

// Parameters of one conv1x1 shortcut (weights plus its normalization pair when gated).
std::int64_t shortcut_params(const ArchSpec& arch, const Block& block, std::int64_t in_width, std::int64_t out_width);

WidthConfig uniform_widths(const ArchSpec& arch, double ratio);

std::vector<ShortcutKind> resolve_shortcuts(const ArchSpec& arch, const WidthConfig& widths);

// Presets ------------------------------------------------------------------

struct PresetOptions {
    std::optional<InputShape> input;
    std::optional<int> num_classes;
};

ArchSpec vgg11(InputShape input = {3, 32, 32}, int num_classes = 10);
ArchSpec resnet18(InputShape input = {3, 64, 64}, int num_classes = 200);
ArchSpec mobilenetv2(InputShape input = {3, 32, 32}, int num_classes = 100);
ArchSpec mlp(int input_dim = 16, std::vector<int> hidden = {120, 80}, int num_classes = 4, bool norm = false);

ArchSpec preset(std::string_view name, const PresetOptions& opts = {});
std::vector<std::string> preset_names();

}  // namespace neuralscale
