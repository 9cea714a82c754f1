#include "neuralscale/scale.hpp"

#include <algorithm>
#include <cmath>

#include "neuralscale/errors.hpp"

namespace neuralscale {

namespace {

void check_params(const ScalingParams& params, const ArchSpec& arch) {
    require(params.size() == static_cast<std::size_t>(arch.prunable_count()) && params.beta.size() == params.size(),
            ErrorKind::Structural, "scaling parameters do not match the architecture's layer count");
    for (std::size_t l = 0; l < params.size(); ++l)
        require(std::isfinite(params.alpha[l]) && params.alpha[l] > 0.0 && std::isfinite(params.beta[l]),
                ErrorKind::Domain, "scaling parameters must be finite with alpha > 0");
}

double rel_gap(double h, double tau_hat) { return std::abs(h - tau_hat) / tau_hat; }

TauDescentResult bisection(const ScalingParams& params, const ArchSpec& arch, double tau_hat,
                           const TauDescentOpts& opts) {
    TauDescentResult res;
    auto eval = [&](double tau) {
        const double h = static_cast<double>(integer_h(params, arch, tau));
        res.trace.push_back({tau, h});
        return h;
    };
    double best_tau = tau_hat;
    double best_gap = rel_gap(eval(tau_hat), tau_hat);
    auto consider = [&](double tau, double h) {
        const double g = rel_gap(h, tau_hat);
        if (g < best_gap) {
            best_gap = g;
            best_tau = tau;
        }
    };
    auto finish = [&]() {
        res.tau_star = best_tau;
        res.converged = best_gap <= opts.rel_tol;
        return res;
    };
    if (best_gap <= opts.rel_tol) return finish();

    if (std::all_of(params.beta.begin(), params.beta.end(), [](double b) { return b == 0.0; }))
        return finish();  // h does not depend on tau: feasibility check only

    const bool above = res.trace.back().h > tau_hat;
    double lo = tau_hat, hi = tau_hat;
    bool bracketed = false;
    for (int i = 0; i < 60 && !bracketed; ++i) {
        if (above) {
            lo /= 2.0;
            const double h = eval(lo);
            consider(lo, h);
            bracketed = h <= tau_hat;
        } else {
            hi *= 2.0;
            const double h = eval(hi);
            consider(hi, h);
            bracketed = h >= tau_hat;
        }
    }
    if (best_gap <= opts.rel_tol) return finish();
    if (!bracketed)
        throw Error(ErrorKind::NoBracket, "no tau within 2^60 of the target brackets the budget; "
                                          "h(Phi(tau)) is not monotone or the target is unreachable");
    if (above) hi = 2.0 * lo;
    else lo = hi / 2.0;

    while (res.iterations < opts.max_iters && best_gap > opts.rel_tol) {
        const double mid = std::sqrt(lo * hi);
        if (!(mid > lo && mid < hi)) break;
        ++res.iterations;
        const double h = eval(mid);
        consider(mid, h);
        if (h < tau_hat) lo = mid;
        else hi = mid;
    }
    return finish();
}

TauDescentResult sgd(const ScalingParams& params, const ArchSpec& arch, double tau_hat, const TauDescentOpts& opts) {
    TauDescentResult res;
    double eta = opts.eta ? *opts.eta : default_eta(params, arch, tau_hat, opts.method);
    double tau = init_tau(params, static_cast<std::int64_t>(tau_hat));
    double h = continuous_h(params, arch, tau);
    res.trace.push_back({tau, h});
    int halvings = 0;
    while (rel_gap(h, tau_hat) > opts.rel_tol && res.iterations < opts.max_iters) {
        // Backtracking: an update that leaves tau > 0 or widens the budget gap
        // is retried with half the rate.
        double next = 0.0, h_next = 0.0;
        while (true) {
            bool ok = true;
            try {
                next = tau_update(params, arch, tau, tau_hat, eta, opts.method);
                h_next = continuous_h(params, arch, next);
                ok = std::isfinite(h_next) && rel_gap(h_next, tau_hat) < rel_gap(h, tau_hat);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::StepSize) throw;
                ok = false;
            }
            if (ok) break;
            if (++halvings > 200)
                throw Error(ErrorKind::StepSize, "tau descent cannot make progress; eta underflowed");
            eta *= 0.5;
        }
        tau = next;
        h = h_next;
        ++res.iterations;
        res.trace.push_back({tau, h});
    }
    res.tau_star = tau;
    res.converged = rel_gap(h, tau_hat) <= opts.rel_tol;
    return res;
}

}  // namespace

std::string_view to_string(TauMethod m) {
    switch (m) {
        case TauMethod::PaperSgd: return "paper-sgd";
        case TauMethod::ExactSgd: return "exact-sgd";
        case TauMethod::Bisection: return "bisection";
    }
    return "?";
}

TauMethod tau_method_from_string(std::string_view s) {
    if (s == "paper-sgd") return TauMethod::PaperSgd;
    if (s == "exact-sgd") return TauMethod::ExactSgd;
    if (s == "bisection") return TauMethod::Bisection;
    fail(ErrorKind::Domain, "unknown tau method '" + std::string(s) + "'");
}

void TauDescentOpts::validate() const {
    require(rel_tol > 0.0, ErrorKind::Domain, "rel_tol must be positive");
    require(max_iters >= 1, ErrorKind::Domain, "max_iters must be >= 1");
    if (eta) require(std::isfinite(*eta) && *eta > 0.0, ErrorKind::Domain, "eta must be positive");
}

double ScaledConfig::relative_error() const {
    return std::abs(static_cast<double>(achieved_params - target)) / static_cast<double>(target);
}

double init_tau(const ScalingParams&, std::int64_t tau_hat) { return static_cast<double>(tau_hat); }

std::vector<double> predict_widths(const ScalingParams& params, double tau) {
    std::vector<double> w(params.size());
    for (std::size_t l = 0; l < w.size(); ++l) w[l] = predict_width(params, static_cast<int>(l), tau);
    return w;
}

WidthConfig round_widths(std::span<const double> widths) {
    std::vector<int> out;
    out.reserve(widths.size());
    for (double w : widths) {
        require(std::isfinite(w), ErrorKind::Numerical, "non-finite predicted width");
        out.push_back(static_cast<int>(std::max(1.0, std::round(w))));
    }
    return WidthConfig(std::move(out));
}

double continuous_h(const ScalingParams& params, const ArchSpec& arch, double tau) {
    return count_params_real(arch, predict_widths(params, tau));
}

std::int64_t integer_h(const ScalingParams& params, const ArchSpec& arch, double tau) {
    return count_params(arch, round_widths(predict_widths(params, tau)));
}

double paper_direction(const ScalingParams& params, double tau) {
    double s = 0.0;
    for (std::size_t l = 0; l < params.size(); ++l)
        s += params.beta[l] * params.alpha[l] * std::pow(tau, params.beta[l] - 1.0);
    return s;
}

double exact_direction(const ScalingParams& params, const ArchSpec& arch, double tau) {
    const auto dh = count_params_gradient(arch, predict_widths(params, tau));
    double s = 0.0;
    for (std::size_t l = 0; l < params.size(); ++l)
        s += dh[l] * params.beta[l] * params.alpha[l] * std::pow(tau, params.beta[l] - 1.0);
    return s;
}

double default_eta(const ScalingParams& params, const ArchSpec& arch, double tau_hat, TauMethod method) {
    const double s = method == TauMethod::ExactSgd ? exact_direction(params, arch, tau_hat)
                                                   : paper_direction(params, tau_hat);
    require(std::isfinite(s) && s != 0.0, ErrorKind::StepSize,
            "update direction vanishes at the target; choose eta explicitly");
    return method == TauMethod::ExactSgd ? 0.5 / (s * s) : 0.5 / std::abs(s);
}

double tau_delta(const ScalingParams& params, const ArchSpec& arch, double tau, double tau_hat, double eta,
                 TauMethod method) {
    require(method != TauMethod::Bisection, ErrorKind::Domain, "bisection has no gradient update");
    const double h = continuous_h(params, arch, tau);
    const double s = method == TauMethod::ExactSgd ? exact_direction(params, arch, tau) : paper_direction(params, tau);
    return eta * (h - tau_hat) * s;
}

double tau_update(const ScalingParams& params, const ArchSpec& arch, double tau, double tau_hat, double eta,
                  TauMethod method) {
    const double next = tau - tau_delta(params, arch, tau, tau_hat, eta, method);
    if (!std::isfinite(next) || next <= 0.0)
        throw Error(ErrorKind::StepSize, "tau update left the positive reals (tau = " + std::to_string(next) +
                                             "); use a smaller eta");
    return next;
}

TauDescentResult tau_descent(const ScalingParams& params, const ArchSpec& arch, std::int64_t tau_hat,
                             const TauDescentOpts& opts) {
    opts.validate();
    check_params(params, arch);
    require(tau_hat >= 1, ErrorKind::Domain, "target parameter count must be >= 1");
    const double target = static_cast<double>(tau_hat);
    return opts.method == TauMethod::Bisection ? bisection(params, arch, target, opts) : sgd(params, arch, target, opts);
}

ScaledConfig generate_widths(const ScalingParams& params, const ArchSpec& arch, std::int64_t tau_hat,
                             const TauDescentOpts& opts) {
    const auto d = tau_descent(params, arch, tau_hat, opts);
    ScaledConfig out;
    const auto predicted = predict_widths(params, d.tau_star);
    out.widths = round_widths(predicted);
    out.achieved_params = count_params(arch, out.widths);
    out.target = tau_hat;
    out.tau_star = d.tau_star;
    out.iterations_used = d.iterations;

    // On small networks the rounded path along tau can jump over the whole
    // tolerance band. Then pick, among configs whose widths stay within
    // [floor, ceil] of the prediction, the one closest to the budget: every
    // corner of that box for shallow nets, single-layer moves otherwise.
    if (out.relative_error() > opts.rel_tol) {
        const std::size_t L = predicted.size();
        std::vector<int> lo(L), hi(L);
        for (std::size_t l = 0; l < L; ++l) {
            lo[l] = std::max(1, static_cast<int>(std::floor(predicted[l])));
            hi[l] = std::max(1, static_cast<int>(std::ceil(predicted[l])));
        }
        auto gap = [&](std::int64_t n) { return std::abs(n - tau_hat); };
        auto moved = [&](const WidthConfig& w) {
            int k = 0;
            for (std::size_t l = 0; l < L; ++l) k += w[l] != out.widths[l];
            return k;
        };
        WidthConfig best = out.widths;
        std::int64_t best_count = out.achieved_params;
        auto offer = [&](const WidthConfig& w) {
            const auto n = count_params(arch, w);
            if (gap(n) < gap(best_count) || (gap(n) == gap(best_count) && moved(w) < moved(best))) {
                best = w;
                best_count = n;
            }
        };
        if (L <= 12) {
            for (std::uint32_t mask = 0; mask < (1u << L); ++mask) {
                WidthConfig w = out.widths;
                for (std::size_t l = 0; l < L; ++l) w.widths[l] = (mask >> l) & 1u ? hi[l] : lo[l];
                offer(w);
            }
        } else {
            for (;;) {
                const auto before = best_count;
                const WidthConfig base = best;
                for (std::size_t l = 0; l < L; ++l) {
                    WidthConfig w = base;
                    w.widths[l] = base[l] == lo[l] ? hi[l] : lo[l];
                    offer(w);
                }
                if (best_count == before) break;
            }
        }
        out.adjusted_layers = moved(best);
        out.widths = best;
        out.achieved_params = best_count;
    }
    out.converged = out.relative_error() <= opts.rel_tol;
    return out;
}

WidthConfig scale_widths(const WidthConfig& base, double ratio) {
    require(std::isfinite(ratio) && ratio > 0.0, ErrorKind::Domain, "ratio must be positive");
    std::vector<double> w(base.widths.begin(), base.widths.end());
    for (double& x : w) x *= ratio;
    return round_widths(w);
}

UniformMatch uniform_match(const ArchSpec& arch, std::int64_t tau_hat) {
    return scale_to_budget(arch, WidthConfig(arch.default_widths()), tau_hat);
}

UniformMatch scale_to_budget(const ArchSpec& arch, const WidthConfig& base, std::int64_t tau_hat) {
    check_widths(arch, base);
    const std::int64_t floor_count = count_params(arch, WidthConfig(std::vector<int>(arch.prunable_count(), 1)));
    require(tau_hat >= floor_count, ErrorKind::InfeasibleBudget,
            "target " + std::to_string(tau_hat) + " is below the smallest configuration (" +
                std::to_string(floor_count) + " parameters with every width 1)");
    auto eval = [&](double r) {
        UniformMatch m{r, scale_widths(base, r), 0};
        m.params = count_params(arch, m.widths);
        return m;
    };
    auto gap = [&](const UniformMatch& m) { return std::abs(static_cast<double>(m.params - tau_hat)); };

    UniformMatch lo = eval(1.0), hi = lo;
    for (int i = 0; i < 64 && hi.params < tau_hat; ++i) hi = eval(hi.ratio * 2.0);
    for (int i = 0; i < 1100 && lo.params > tau_hat; ++i) lo = eval(lo.ratio / 2.0);
    require(hi.params >= tau_hat, ErrorKind::InfeasibleBudget, "target is beyond the reachable uniform range");
    if (lo.params > tau_hat) return lo;  // every ratio rounds to all-ones, which is then closest

    UniformMatch best = gap(lo) <= gap(hi) ? lo : hi;
    for (int i = 0; i < 200 && best.params != tau_hat; ++i) {
        const double mid = 0.5 * (lo.ratio + hi.ratio);
        if (!(mid > lo.ratio && mid < hi.ratio)) break;
        const auto m = eval(mid);
        if (gap(m) < gap(best) || (gap(m) == gap(best) && m.ratio < best.ratio)) best = m;
        if (m.params < tau_hat) lo = m;
        else hi = m;
    }
    return best;
}

}  // namespace neuralscale
