#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "neuralscale/arch.hpp"

namespace neuralscale {

// Dense NCHW activation tensor. Dense activations use h = w = 1.
struct Tensor {
    int n = 0, c = 0, h = 1, w = 1;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_) {}

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t index(int ni, int ci, int y, int x) const {
        return ((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x;
    }
    double* channel(int ni, int ci) { return data.data() + (static_cast<std::size_t>(ni) * c + ci) * plane(); }
    const double* channel(int ni, int ci) const { return data.data() + (static_cast<std::size_t>(ni) * c + ci) * plane(); }
};

// A trainable tensor with its gradient and momentum buffer.
struct Param {
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> velocity;

    void resize(std::size_t n) {
        value.assign(n, 0.0);
        grad.assign(n, 0.0);
        velocity.assign(n, 0.0);
    }
    std::size_t size() const { return value.size(); }
};

struct Layer {
    int in_channels = 0;
    int out_channels = 0;
    Param weight;  // conv: [out][in][kh][kw], depthwise: [out][kh][kw], dense: [out][in]
    Param bias;    // dense layers only
    bool norm = false;
    Param gamma, beta;
    std::vector<double> running_mean, running_var;
    Param gate;                       // per output channel, initialized to 1
    std::vector<std::uint8_t> alive;  // per output channel

    int alive_count() const;
};

struct Shortcut {
    bool projection = false;  // conv1x1 (+ norm) when true, identity otherwise
    int stride = 1;
    int in_channels = 0;
    int out_channels = 0;
    Param weight;  // [out][in]
    bool norm = false;
    Param gamma, beta;
    std::vector<double> running_mean, running_var;
};

struct Classifier {
    int in_features = 0;
    int num_classes = 0;
    Param weight;  // [class][feature]
    Param bias;
};

// Trainable instance of an ArchSpec at a given WidthConfig. Pruning never
// reshapes tensors: a pruned channel keeps its storage but has gate 0 and is
// masked out of the forward pass and of every update.
class Network {
public:
    ArchSpec arch;
    WidthConfig widths;  // physical widths at construction
    std::vector<Block> blocks;
    std::vector<Layer> layers;
    std::vector<Shortcut> shortcuts;  // one per block
    Classifier classifier;

    int block_ending_at(int layer) const;

    // Alive channel count of every prunable layer.
    WidthConfig alive_widths() const;
    std::int64_t alive_params() const;
    int total_gates() const;  // prunable layers only
    int alive_gates() const;

    void kill_channel(int layer, int channel);
    void zero_grad();

    struct ParamInfo {
        std::size_t per_channel = 0;                   // entries owned by each output channel
        const std::vector<std::uint8_t>* alive = nullptr;  // owning mask, nullptr if not channel-indexed
        bool is_gate = false;
    };

    // Visit every trainable tensor in a fixed order.
    void for_each_param(const std::function<void(Param&, const ParamInfo&)>& fn);
};

// Deterministic in (arch, widths, seed). Fan-in scaled uniform weights,
// zero biases, unit gates, all channels alive.
Network init_network(const ArchSpec& arch, const WidthConfig& widths, std::uint64_t seed);

enum class Mode { Train, Eval };

struct NormCache {
    std::vector<double> mean, var, inv_std;
    Tensor xhat;
};

struct LayerCache {
    Tensor pre;          // op output
    NormCache norm;
    Tensor normed;       // after normalization, before the gate
    Tensor summed;       // after gate, mask and residual add, before activation
    Tensor activated;    // after activation, before pooling
    Tensor output;       // layer output (after optional pooling)
    std::vector<std::uint32_t> pool_argmax;
    bool pooled = false;
    // shortcut (block-final layers with a projection)
    Tensor shortcut_pre;
    NormCache shortcut_norm;
    Tensor shortcut_out;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Tensor features;  // classifier input, (n, F)
    Tensor logits;    // (n, classes)
    Tensor input;
};

// Logits for a batch. The cache is filled when non-null.
Tensor forward(const Network& net, const Tensor& input, Mode mode, ForwardCache* cache = nullptr);

// Mean softmax cross-entropy of logits against labels.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

// Train-mode forward + backward. Gradients are accumulated into the
// network's Param::grad buffers (call zero_grad first). Returns the mean loss.
double backward(Network& net, const Tensor& input, std::span<const int> labels, ForwardCache& cache);

// Move running normalization statistics towards the batch statistics in cache.
void update_running_stats(Network& net, const ForwardCache& cache, double momentum = 0.1);

struct SgdSettings {
    double learning_rate = 0.1;
    double momentum = 0.5;
    double weight_decay = 5e-4;
    bool update_gates = false;
};

// One SGD-with-momentum update from the current grad buffers. Entries owned
// by dead channels are never touched.
void sgd_step(Network& net, const SgdSettings& s);

// Predicted class per row; ties resolve to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace neuralscale
