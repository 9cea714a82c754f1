#include "neuralscale/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neuralscale/errors.hpp"
#include "neuralscale/rng.hpp"

namespace neuralscale {

namespace {

constexpr double kNormEps = 1e-5;

void fill_uniform(Param& p, std::size_t n, double bound, Rng& rng) {
    p.resize(n);
    for (double& v : p.value) v = rng.uniform(-bound, bound);
}

void fill_const(Param& p, std::size_t n, double value) {
    p.resize(n);
    std::fill(p.value.begin(), p.value.end(), value);
}

int pad_of(int k) { return (k - 1) / 2; }

int conv_out_size(int in, int k, int stride) { return (in + 2 * pad_of(k) - k) / stride + 1; }

// --- ops ----------------------------------------------------------------------

Tensor conv_forward(const Tensor& x, const std::vector<double>& w, int out_c, int kh, int kw, int stride) {
    const int ho = conv_out_size(x.h, kh, stride), wo = conv_out_size(x.w, kw, stride);
    const int ph = pad_of(kh), pw = pad_of(kw);
    Tensor y(x.n, out_c, ho, wo);
    for (int n = 0; n < x.n; ++n) {
        for (int o = 0; o < out_c; ++o) {
            double* yp = y.channel(n, o);
            for (int i = 0; i < x.c; ++i) {
                const double* xp = x.channel(n, i);
                const double* wp = w.data() + (static_cast<std::size_t>(o) * x.c + i) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wp[ky * kw + kx];
                        if (wv == 0.0) continue;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride + ky - ph;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride + kx - pw;
                                if (ix < 0 || ix >= x.w) continue;
                                yp[oy * wo + ox] += wv * xp[iy * x.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv_backward(const Tensor& x, const std::vector<double>& w, const Tensor& dy, int kh, int kw, int stride,
                   std::vector<double>& dw, Tensor* dx) {
    const int ph = pad_of(kh), pw = pad_of(kw);
    for (int n = 0; n < x.n; ++n) {
        for (int o = 0; o < dy.c; ++o) {
            const double* dyp = dy.channel(n, o);
            for (int i = 0; i < x.c; ++i) {
                const double* xp = x.channel(n, i);
                double* dxp = dx ? dx->channel(n, i) : nullptr;
                const std::size_t base = (static_cast<std::size_t>(o) * x.c + i) * kh * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = w[base + ky * kw + kx];
                        double acc = 0.0;
                        for (int oy = 0; oy < dy.h; ++oy) {
                            const int iy = oy * stride + ky - ph;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int ox = 0; ox < dy.w; ++ox) {
                                const int ix = ox * stride + kx - pw;
                                if (ix < 0 || ix >= x.w) continue;
                                const double g = dyp[oy * dy.w + ox];
                                acc += g * xp[iy * x.w + ix];
                                if (dxp) dxp[iy * x.w + ix] += g * wv;
                            }
                        }
                        dw[base + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
}

Tensor depthwise_forward(const Tensor& x, const std::vector<double>& w, int kh, int kw, int stride) {
    const int ho = conv_out_size(x.h, kh, stride), wo = conv_out_size(x.w, kw, stride);
    const int ph = pad_of(kh), pw = pad_of(kw);
    Tensor y(x.n, x.c, ho, wo);
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            const double* xp = x.channel(n, c);
            double* yp = y.channel(n, c);
            const double* wp = w.data() + static_cast<std::size_t>(c) * kh * kw;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - ph;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pw;
                            if (ix < 0 || ix >= x.w) continue;
                            acc += wp[ky * kw + kx] * xp[iy * x.w + ix];
                        }
                    }
                    yp[oy * wo + ox] = acc;
                }
            }
        }
    }
    return y;
}

void depthwise_backward(const Tensor& x, const std::vector<double>& w, const Tensor& dy, int kh, int kw, int stride,
                        std::vector<double>& dw, Tensor* dx) {
    const int ph = pad_of(kh), pw = pad_of(kw);
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            const double* xp = x.channel(n, c);
            const double* dyp = dy.channel(n, c);
            double* dxp = dx ? dx->channel(n, c) : nullptr;
            const std::size_t base = static_cast<std::size_t>(c) * kh * kw;
            for (int oy = 0; oy < dy.h; ++oy) {
                for (int ox = 0; ox < dy.w; ++ox) {
                    const double g = dyp[oy * dy.w + ox];
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - ph;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pw;
                            if (ix < 0 || ix >= x.w) continue;
                            dw[base + ky * kw + kx] += g * xp[iy * x.w + ix];
                            if (dxp) dxp[iy * x.w + ix] += g * w[base + ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
}

// x is (n, in, 1, 1) or any tensor flattened to n rows of c*h*w features.
Tensor dense_forward(const Tensor& x, const std::vector<double>& w, const std::vector<double>& b, int out) {
    const std::size_t in = static_cast<std::size_t>(x.c) * x.plane();
    Tensor y(x.n, out, 1, 1);
    for (int n = 0; n < x.n; ++n) {
        const double* xp = x.data.data() + n * in;
        for (int o = 0; o < out; ++o) {
            const double* wp = w.data() + o * in;
            double acc = b.empty() ? 0.0 : b[o];
            for (std::size_t i = 0; i < in; ++i) acc += wp[i] * xp[i];
            y.data[static_cast<std::size_t>(n) * out + o] = acc;
        }
    }
    return y;
}

void dense_backward(const Tensor& x, const std::vector<double>& w, const Tensor& dy, std::vector<double>& dw,
                    std::vector<double>* db, Tensor* dx) {
    const std::size_t in = static_cast<std::size_t>(x.c) * x.plane();
    const int out = dy.c;
    for (int n = 0; n < x.n; ++n) {
        const double* xp = x.data.data() + n * in;
        double* dxp = dx ? dx->data.data() + n * in : nullptr;
        for (int o = 0; o < out; ++o) {
            const double g = dy.data[static_cast<std::size_t>(n) * out + o];
            if (db) (*db)[o] += g;
            if (g == 0.0) continue;
            double* dwp = dw.data() + o * in;
            const double* wp = w.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) {
                dwp[i] += g * xp[i];
                if (dxp) dxp[i] += g * wp[i];
            }
        }
    }
}

void norm_forward(const Tensor& u, const Param& gamma, const Param& beta, const std::vector<double>& running_mean,
                  const std::vector<double>& running_var, Mode mode, NormCache& nc, Tensor& out) {
    const std::size_t plane = u.plane();
    const double m = static_cast<double>(u.n) * plane;
    nc.mean.assign(u.c, 0.0);
    nc.var.assign(u.c, 0.0);
    nc.inv_std.assign(u.c, 0.0);
    nc.xhat = Tensor(u.n, u.c, u.h, u.w);
    out = Tensor(u.n, u.c, u.h, u.w);
    for (int c = 0; c < u.c; ++c) {
        double mean, var;
        if (mode == Mode::Train) {
            double s = 0.0;
            for (int n = 0; n < u.n; ++n) {
                const double* p = u.channel(n, c);
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
            }
            mean = s / m;
            double ss = 0.0;
            for (int n = 0; n < u.n; ++n) {
                const double* p = u.channel(n, c);
                for (std::size_t k = 0; k < plane; ++k) ss += (p[k] - mean) * (p[k] - mean);
            }
            var = ss / m;
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        nc.mean[c] = mean;
        nc.var[c] = var;
        nc.inv_std[c] = inv;
        for (int n = 0; n < u.n; ++n) {
            const double* p = u.channel(n, c);
            double* xh = nc.xhat.channel(n, c);
            double* o = out.channel(n, c);
            for (std::size_t k = 0; k < plane; ++k) {
                xh[k] = (p[k] - mean) * inv;
                o[k] = gamma.value[c] * xh[k] + beta.value[c];
            }
        }
    }
}

// Train-mode normalization backward.
Tensor norm_backward(const Tensor& dy, const NormCache& nc, Param& gamma, Param& beta) {
    const std::size_t plane = dy.plane();
    const double m = static_cast<double>(dy.n) * plane;
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    for (int c = 0; c < dy.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < dy.n; ++n) {
            const double* g = dy.channel(n, c);
            const double* xh = nc.xhat.channel(n, c);
            for (std::size_t k = 0; k < plane; ++k) {
                sum_dy += g[k];
                sum_dy_xhat += g[k] * xh[k];
            }
        }
        gamma.grad[c] += sum_dy_xhat;
        beta.grad[c] += sum_dy;
        const double scale = gamma.value[c] * nc.inv_std[c] / m;
        for (int n = 0; n < dy.n; ++n) {
            const double* g = dy.channel(n, c);
            const double* xh = nc.xhat.channel(n, c);
            double* d = dx.channel(n, c);
            for (std::size_t k = 0; k < plane; ++k) d[k] = scale * (m * g[k] - sum_dy - xh[k] * sum_dy_xhat);
        }
    }
    return dx;
}

Tensor maxpool_forward(const Tensor& x, std::vector<std::uint32_t>& argmax) {
    const int ho = x.h / 2, wo = x.w / 2;
    Tensor y(x.n, x.c, ho, wo);
    argmax.assign(y.data.size(), 0);
    std::size_t idx = 0;
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            const double* xp = x.channel(n, c);
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox, ++idx) {
                    std::uint32_t best = static_cast<std::uint32_t>((2 * oy) * x.w + 2 * ox);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const auto k = static_cast<std::uint32_t>((2 * oy + dy) * x.w + 2 * ox + dx);
                            if (xp[k] > xp[best]) best = k;
                        }
                    argmax[idx] = best;
                    y.data[idx] = xp[best];
                }
            }
        }
    }
    return y;
}

Tensor maxpool_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Tensor& like) {
    Tensor dx(like.n, like.c, like.h, like.w);
    std::size_t idx = 0;
    for (int n = 0; n < dy.n; ++n)
        for (int c = 0; c < dy.c; ++c) {
            double* dxp = dx.channel(n, c);
            for (std::size_t k = 0; k < dy.plane(); ++k, ++idx) dxp[argmax[idx]] += dy.data[idx];
        }
    return dx;
}

void add_into(Tensor& dst, const Tensor& src) {
    if (dst.data.empty()) {
        dst = src;
        return;
    }
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

const Tensor& block_input(const ForwardCache& fc, const Block& b) {
    return b.first == 0 ? fc.input : fc.layers[b.first - 1].output;
}

}  // namespace

// --- Network ------------------------------------------------------------------

int Layer::alive_count() const {
    return static_cast<int>(std::count(alive.begin(), alive.end(), std::uint8_t{1}));
}

int Network::block_ending_at(int layer) const {
    for (std::size_t b = 0; b < blocks.size(); ++b)
        if (blocks[b].last == layer) return static_cast<int>(b);
    return -1;
}

WidthConfig Network::alive_widths() const {
    std::vector<int> w;
    for (int i : arch.prunable_layers()) w.push_back(layers[i].alive_count());
    return WidthConfig(std::move(w));
}

std::int64_t Network::alive_params() const { return count_params(arch, alive_widths()); }

int Network::total_gates() const {
    int n = 0;
    for (int i : arch.prunable_layers()) n += layers[i].out_channels;
    return n;
}

int Network::alive_gates() const {
    int n = 0;
    for (int i : arch.prunable_layers()) n += layers[i].alive_count();
    return n;
}

void Network::kill_channel(int layer, int channel) {
    auto& l = layers.at(layer);
    require(channel >= 0 && channel < l.out_channels, ErrorKind::Domain, "channel index out of range");
    l.alive[channel] = 0;
    l.gate.value[channel] = 0.0;
}

void Network::zero_grad() {
    for_each_param([](Param& p, const ParamInfo&) { std::fill(p.grad.begin(), p.grad.end(), 0.0); });
}

void Network::for_each_param(const std::function<void(Param&, const ParamInfo&)>& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        const auto* alive = &l.alive;
        fn(l.weight, {l.weight.size() / l.out_channels, alive, false});
        if (l.bias.size()) fn(l.bias, {1, alive, false});
        if (l.norm) {
            fn(l.gamma, {1, alive, false});
            fn(l.beta, {1, alive, false});
        }
        fn(l.gate, {1, alive, true});
    }
    for (std::size_t b = 0; b < shortcuts.size(); ++b) {
        auto& s = shortcuts[b];
        if (!s.projection) continue;
        const auto* alive = &layers[blocks[b].last].alive;
        fn(s.weight, {static_cast<std::size_t>(s.in_channels), alive, false});
        if (s.norm) {
            fn(s.gamma, {1, alive, false});
            fn(s.beta, {1, alive, false});
        }
    }
    fn(classifier.weight, {});
    fn(classifier.bias, {});
}

Network init_network(const ArchSpec& arch, const WidthConfig& widths, std::uint64_t seed) {
    validate_arch(arch);
    const auto lw = layer_widths(arch, widths);  // checks widths
    Network net;
    net.arch = arch;
    net.widths = widths;
    net.blocks = arch.blocks();
    Rng rng(seed);

    int in = arch.input.channels;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& spec = arch.layers[i];
        Layer l;
        l.in_channels = in;
        l.out_channels = lw[i];
        const int k = spec.kernel ? spec.kernel->h * spec.kernel->w : 1;
        std::size_t n_weights = 0;
        int fan_in = 0;
        switch (spec.kind) {
            case LayerKind::Conv:
            case LayerKind::Pointwise:
                n_weights = static_cast<std::size_t>(l.out_channels) * in * k;
                fan_in = in * k;
                break;
            case LayerKind::Depthwise:
                n_weights = static_cast<std::size_t>(l.out_channels) * k;
                fan_in = k;
                break;
            case LayerKind::Dense:
                n_weights = static_cast<std::size_t>(l.out_channels) * in;
                fan_in = in;
                break;
        }
        fill_uniform(l.weight, n_weights, std::sqrt(6.0 / fan_in), rng);
        if (spec.kind == LayerKind::Dense) fill_const(l.bias, l.out_channels, 0.0);
        l.norm = spec.has_norm_gate;
        if (l.norm) {
            fill_const(l.gamma, l.out_channels, 1.0);
            fill_const(l.beta, l.out_channels, 0.0);
            l.running_mean.assign(l.out_channels, 0.0);
            l.running_var.assign(l.out_channels, 1.0);
        }
        fill_const(l.gate, l.out_channels, 1.0);
        l.alive.assign(l.out_channels, 1);
        net.layers.push_back(std::move(l));
        in = lw[i];
    }

    for (const auto& b : net.blocks) {
        Shortcut s;
        s.in_channels = b.first == 0 ? arch.input.channels : lw[b.first - 1];
        s.out_channels = lw[b.last];
        s.stride = b.stride;
        s.projection = !(s.in_channels == s.out_channels && s.stride == 1);
        s.norm = arch.layers[b.last].has_norm_gate;
        if (s.projection) {
            fill_uniform(s.weight, static_cast<std::size_t>(s.out_channels) * s.in_channels,
                         std::sqrt(6.0 / s.in_channels), rng);
            if (s.norm) {
                fill_const(s.gamma, s.out_channels, 1.0);
                fill_const(s.beta, s.out_channels, 0.0);
                s.running_mean.assign(s.out_channels, 0.0);
                s.running_var.assign(s.out_channels, 1.0);
            }
        }
        net.shortcuts.push_back(std::move(s));
    }

    net.classifier.in_features = lw.back();
    net.classifier.num_classes = arch.num_classes;
    fill_uniform(net.classifier.weight, static_cast<std::size_t>(arch.num_classes) * lw.back(),
                 1.0 / std::sqrt(static_cast<double>(lw.back())), rng);
    fill_const(net.classifier.bias, arch.num_classes, 0.0);
    return net;
}

// --- forward / backward ----------------------------------------------------------

Tensor forward(const Network& net, const Tensor& input, Mode mode, ForwardCache* cache) {
    require(input.c == net.arch.input.channels && input.h == net.arch.input.height && input.w == net.arch.input.width,
            ErrorKind::Structural, "input tensor shape does not match the architecture");
    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    fc.input = input;
    fc.layers.assign(net.layers.size(), LayerCache{});

    const Tensor* x = &fc.input;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& spec = net.arch.layers[i];
        const auto& layer = net.layers[i];
        auto& lc = fc.layers[i];

        switch (spec.kind) {
            case LayerKind::Conv:
            case LayerKind::Pointwise:
                lc.pre = conv_forward(*x, layer.weight.value, layer.out_channels, spec.kernel->h, spec.kernel->w,
                                      spec.stride);
                break;
            case LayerKind::Depthwise:
                lc.pre = depthwise_forward(*x, layer.weight.value, spec.kernel->h, spec.kernel->w, spec.stride);
                break;
            case LayerKind::Dense:
                lc.pre = dense_forward(*x, layer.weight.value, layer.bias.value, layer.out_channels);
                break;
        }

        if (layer.norm)
            norm_forward(lc.pre, layer.gamma, layer.beta, layer.running_mean, layer.running_var, mode, lc.norm,
                         lc.normed);
        else
            lc.normed = lc.pre;

        lc.summed = lc.normed;
        const std::size_t plane = lc.summed.plane();
        for (int n = 0; n < lc.summed.n; ++n)
            for (int c = 0; c < lc.summed.c; ++c) {
                double* p = lc.summed.channel(n, c);
                const double z = layer.gate.value[c];
                const bool alive = layer.alive[c] != 0;
                for (std::size_t k = 0; k < plane; ++k) p[k] = alive ? p[k] * z : 0.0;
            }

        const int b = net.block_ending_at(static_cast<int>(i));
        if (b >= 0) {
            const auto& sc = net.shortcuts[b];
            const Tensor& bin = block_input(fc, net.blocks[b]);
            if (sc.projection) {
                lc.shortcut_pre = conv_forward(bin, sc.weight.value, sc.out_channels, 1, 1, sc.stride);
                if (sc.norm)
                    norm_forward(lc.shortcut_pre, sc.gamma, sc.beta, sc.running_mean, sc.running_var, mode,
                                 lc.shortcut_norm, lc.shortcut_out);
                else
                    lc.shortcut_out = lc.shortcut_pre;
            } else {
                lc.shortcut_out = bin;
            }
            for (int n = 0; n < lc.summed.n; ++n)
                for (int c = 0; c < lc.summed.c; ++c) {
                    double* p = lc.summed.channel(n, c);
                    const double* s = lc.shortcut_out.channel(n, c);
                    const bool alive = layer.alive[c] != 0;
                    for (std::size_t k = 0; k < plane; ++k) p[k] = alive ? p[k] + s[k] : 0.0;
                }
        }

        lc.activated = lc.summed;
        if (spec.relu)
            for (double& v : lc.activated.data) v = v < 0.0 ? 0.0 : v;  // keeps NaN visible

        lc.pooled = spec.pool_after && lc.activated.h >= 2 && lc.activated.w >= 2;
        if (lc.pooled)
            lc.output = maxpool_forward(lc.activated, lc.pool_argmax);
        else
            lc.output = lc.activated;
        x = &lc.output;
    }

    // global average pool
    fc.features = Tensor(x->n, x->c, 1, 1);
    const std::size_t plane = x->plane();
    for (int n = 0; n < x->n; ++n)
        for (int c = 0; c < x->c; ++c) {
            const double* p = x->channel(n, c);
            double s = 0.0;
            for (std::size_t k = 0; k < plane; ++k) s += p[k];
            fc.features.data[static_cast<std::size_t>(n) * x->c + c] = s / static_cast<double>(plane);
        }
    fc.logits = dense_forward(fc.features, net.classifier.weight.value, net.classifier.bias.value,
                              net.classifier.num_classes);
    return fc.logits;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require(static_cast<std::size_t>(logits.n) == labels.size(), ErrorKind::Structural, "label count mismatch");
    double total = 0.0;
    for (int n = 0; n < logits.n; ++n) {
        const double* z = logits.data.data() + static_cast<std::size_t>(n) * logits.c;
        const double mx = *std::max_element(z, z + logits.c);
        double s = 0.0;
        for (int k = 0; k < logits.c; ++k) s += std::exp(z[k] - mx);
        total += std::log(s) + mx - z[labels[n]];
    }
    return total / logits.n;
}

double backward(Network& net, const Tensor& input, std::span<const int> labels, ForwardCache& fc) {
    const Tensor logits = forward(net, input, Mode::Train, &fc);
    const double loss = cross_entropy(logits, labels);
    if (!std::isfinite(loss)) return loss;

    const int batch = logits.n, classes = logits.c;
    Tensor dlogits(batch, classes, 1, 1);
    for (int n = 0; n < batch; ++n) {
        const double* z = logits.data.data() + static_cast<std::size_t>(n) * classes;
        double* d = dlogits.data.data() + static_cast<std::size_t>(n) * classes;
        const double mx = *std::max_element(z, z + classes);
        double s = 0.0;
        for (int k = 0; k < classes; ++k) s += std::exp(z[k] - mx);
        for (int k = 0; k < classes; ++k) d[k] = std::exp(z[k] - mx) / s / batch;
        d[labels[n]] -= 1.0 / batch;
    }

    Tensor dfeat(fc.features.n, fc.features.c, 1, 1);
    dense_backward(fc.features, net.classifier.weight.value, dlogits, net.classifier.weight.grad,
                   &net.classifier.bias.grad, &dfeat);

    const int num_layers = static_cast<int>(net.layers.size());
    std::vector<Tensor> dout(num_layers);
    {
        const Tensor& last = fc.layers.back().output;
        Tensor d(last.n, last.c, last.h, last.w);
        const double inv_plane = 1.0 / static_cast<double>(last.plane());
        for (int n = 0; n < last.n; ++n)
            for (int c = 0; c < last.c; ++c) {
                double* p = d.channel(n, c);
                const double g = dfeat.data[static_cast<std::size_t>(n) * last.c + c] * inv_plane;
                for (std::size_t k = 0; k < last.plane(); ++k) p[k] = g;
            }
        dout.back() = std::move(d);
    }

    for (int i = num_layers - 1; i >= 0; --i) {
        const auto& spec = net.arch.layers[i];
        auto& layer = net.layers[i];
        const auto& lc = fc.layers[i];

        Tensor d = std::move(dout[i]);
        if (lc.pooled) d = maxpool_backward(d, lc.pool_argmax, lc.activated);
        if (spec.relu)
            for (std::size_t k = 0; k < d.data.size(); ++k)
                if (!(lc.summed.data[k] > 0.0)) d.data[k] = 0.0;
        const std::size_t plane = d.plane();
        for (int n = 0; n < d.n; ++n)
            for (int c = 0; c < d.c; ++c)
                if (!layer.alive[c]) std::fill_n(d.channel(n, c), plane, 0.0);

        const int b = net.block_ending_at(i);
        if (b >= 0) {
            auto& sc = net.shortcuts[b];
            const auto& blk = net.blocks[b];
            const Tensor& bin = block_input(fc, blk);
            Tensor dbin(bin.n, bin.c, bin.h, bin.w);
            if (sc.projection) {
                Tensor ds = sc.norm ? norm_backward(d, lc.shortcut_norm, sc.gamma, sc.beta) : d;
                conv_backward(bin, sc.weight.value, ds, 1, 1, sc.stride, sc.weight.grad, blk.first > 0 ? &dbin : nullptr);
            } else {
                dbin = d;
            }
            if (blk.first > 0) add_into(dout[blk.first - 1], dbin);
        }

        // gate
        Tensor dnormed(d.n, d.c, d.h, d.w);
        for (int n = 0; n < d.n; ++n)
            for (int c = 0; c < d.c; ++c) {
                if (!layer.alive[c]) continue;
                const double* g = d.channel(n, c);
                const double* v = lc.normed.channel(n, c);
                double* dn = dnormed.channel(n, c);
                const double z = layer.gate.value[c];
                double acc = 0.0;
                for (std::size_t k = 0; k < plane; ++k) {
                    acc += g[k] * v[k];
                    dn[k] = g[k] * z;
                }
                layer.gate.grad[c] += acc;
            }

        Tensor dpre = layer.norm ? norm_backward(dnormed, lc.norm, layer.gamma, layer.beta) : std::move(dnormed);

        const Tensor& x = i == 0 ? fc.input : fc.layers[i - 1].output;
        Tensor dx;
        Tensor* dxp = nullptr;
        if (i > 0) {
            dx = Tensor(x.n, x.c, x.h, x.w);
            dxp = &dx;
        }
        switch (spec.kind) {
            case LayerKind::Conv:
            case LayerKind::Pointwise:
                conv_backward(x, layer.weight.value, dpre, spec.kernel->h, spec.kernel->w, spec.stride,
                              layer.weight.grad, dxp);
                break;
            case LayerKind::Depthwise:
                depthwise_backward(x, layer.weight.value, dpre, spec.kernel->h, spec.kernel->w, spec.stride,
                                   layer.weight.grad, dxp);
                break;
            case LayerKind::Dense:
                dense_backward(x, layer.weight.value, dpre, layer.weight.grad, &layer.bias.grad, dxp);
                break;
        }
        if (i > 0) add_into(dout[i - 1], dx);
    }
    return loss;
}

void update_running_stats(Network& net, const ForwardCache& fc, double momentum) {
    const auto update = [momentum](std::vector<double>& rm, std::vector<double>& rv, const NormCache& nc,
                                   const Tensor& t) {
        const double m = static_cast<double>(t.n) * t.plane();
        const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm[c] = (1.0 - momentum) * rm[c] + momentum * nc.mean[c];
            rv[c] = (1.0 - momentum) * rv[c] + momentum * nc.var[c] * unbias;
        }
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& layer = net.layers[i];
        const auto& lc = fc.layers[i];
        if (layer.norm) update(layer.running_mean, layer.running_var, lc.norm, lc.pre);
        const int b = net.block_ending_at(static_cast<int>(i));
        if (b >= 0) {
            auto& sc = net.shortcuts[b];
            if (sc.projection && sc.norm) update(sc.running_mean, sc.running_var, lc.shortcut_norm, lc.shortcut_pre);
        }
    }
}

void sgd_step(Network& net, const SgdSettings& s) {
    net.for_each_param([&](Param& p, const Network::ParamInfo& info) {
        if (info.is_gate && !s.update_gates) return;
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (info.alive && !(*info.alive)[k / info.per_channel]) continue;
            const double g = p.grad[k] + s.weight_decay * p.value[k];
            p.velocity[k] = s.momentum * p.velocity[k] + g;
            p.value[k] -= s.learning_rate * p.velocity[k];
        }
    });
}

std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.n);
    for (int n = 0; n < logits.n; ++n) {
        const double* z = logits.data.data() + static_cast<std::size_t>(n) * logits.c;
        int best = 0;
        for (int k = 1; k < logits.c; ++k)
            if (z[k] > z[best]) best = k;
        out[n] = best;
    }
    return out;
}

}  // namespace neuralscale
