#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neuralscale/prune.hpp"

namespace neuralscale {

// One (tau, phi) observation with real-valued widths.
struct Sample {
    double tau = 0.0;
    std::vector<double> phi;
};

struct DesignMatrices {
    Eigen::MatrixXd T;    // N x 2, rows (1, ln tau)
    Eigen::MatrixXd Phi;  // N x L, ln phi
};

DesignMatrices build_design(std::span<const Sample> samples);
DesignMatrices build_design(const PruneTrajectory& traj);

enum class SolveMethod { Auto, NormalEquations, QR };

struct ScalingParams {
    std::string arch_name;
    std::vector<double> alpha;
    std::vector<double> beta;
    std::vector<double> rss;  // per-layer residual sum of squares in log space
    int n = 0;                // samples used
    bool used_qr = false;

    std::size_t size() const { return alpha.size(); }
};

// Per-layer least squares of ln phi_l = ln alpha_l + beta_l ln tau. Auto uses
// the normal equations unless cond(T'T) > 1e10, then Householder QR.
ScalingParams solve_theta(const DesignMatrices& dm, SolveMethod method = SolveMethod::Auto);

// Log-space residual ||T theta - Phi_l||^2 of one layer for a given (ln alpha, beta).
double log_residual(const DesignMatrices& dm, int layer, double log_alpha, double beta);

// alpha_l * tau^beta_l, unrounded. `layer` is zero-based.
double predict_width(const ScalingParams& params, int layer, double tau);

}  // namespace neuralscale
