#include "neuralscale/fit.hpp"

#include <cmath>
#include <set>

#include "neuralscale/errors.hpp"

namespace neuralscale {

DesignMatrices build_design(std::span<const Sample> samples) {
    require(samples.size() >= 2, ErrorKind::InsufficientData,
            "a power-law fit needs N >= 2 trajectory records, got " + std::to_string(samples.size()));
    const std::size_t layers = samples.front().phi.size();
    require(layers >= 1, ErrorKind::Structural, "samples carry no widths");
    const auto n = static_cast<Eigen::Index>(samples.size());
    DesignMatrices dm{Eigen::MatrixXd(n, 2), Eigen::MatrixXd(n, static_cast<Eigen::Index>(layers))};
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& s = samples[static_cast<std::size_t>(r)];
        require(s.phi.size() == layers, ErrorKind::Structural,
                "record " + std::to_string(r) + " has " + std::to_string(s.phi.size()) + " widths, expected " +
                    std::to_string(layers));
        require(std::isfinite(s.tau) && s.tau >= 1.0, ErrorKind::Domain,
                "record " + std::to_string(r) + ": tau must be >= 1");
        dm.T(r, 0) = 1.0;
        dm.T(r, 1) = std::log(s.tau);
        for (std::size_t l = 0; l < layers; ++l) {
            require(std::isfinite(s.phi[l]) && s.phi[l] >= 1.0, ErrorKind::Domain,
                    "record " + std::to_string(r) + ": width of layer " + std::to_string(l) + " must be >= 1");
            dm.Phi(r, static_cast<Eigen::Index>(l)) = std::log(s.phi[l]);
        }
    }
    return dm;
}

DesignMatrices build_design(const PruneTrajectory& traj) {
    std::vector<Sample> samples;
    samples.reserve(traj.records.size());
    for (const auto& rec : traj.records)
        samples.push_back({static_cast<double>(rec.tau), std::vector<double>(rec.phi.widths.begin(), rec.phi.widths.end())});
    return build_design(samples);
}

ScalingParams solve_theta(const DesignMatrices& dm, SolveMethod method) {
    const auto n = dm.T.rows();
    require(n >= 2 && dm.T.cols() == 2 && dm.Phi.rows() == n, ErrorKind::Structural, "malformed design matrices");
    std::set<double> distinct(dm.T.col(1).data(), dm.T.col(1).data() + n);
    require(distinct.size() >= 2, ErrorKind::SingularDesign,
            "design matrix is rank deficient: all trajectory records share one tau");

    const Eigen::Matrix2d gram = dm.T.transpose() * dm.T;
    const Eigen::Vector2d eig = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(gram).eigenvalues();
    const double cond = eig(0) > 0.0 ? eig(1) / eig(0) : std::numeric_limits<double>::infinity();

    bool use_qr = method == SolveMethod::QR || (method == SolveMethod::Auto && cond > 1e10);
    Eigen::MatrixXd theta;
    if (use_qr) {
        theta = dm.T.householderQr().solve(dm.Phi);
    } else {
        require(std::isfinite(cond), ErrorKind::SingularDesign, "T'T is singular");
        theta = gram.ldlt().solve(dm.T.transpose() * dm.Phi);
    }

    ScalingParams out;
    out.n = static_cast<int>(n);
    out.used_qr = use_qr;
    const Eigen::MatrixXd resid = dm.T * theta - dm.Phi;
    for (Eigen::Index l = 0; l < dm.Phi.cols(); ++l) {
        const double a = std::exp(theta(0, l));
        const double b = theta(1, l);
        require(std::isfinite(a) && a > 0.0 && std::isfinite(b), ErrorKind::Numerical,
                "non-finite fit for layer " + std::to_string(l));
        out.alpha.push_back(a);
        out.beta.push_back(b);
        out.rss.push_back(resid.col(l).squaredNorm());
    }
    return out;
}

double log_residual(const DesignMatrices& dm, int layer, double log_alpha, double beta) {
    require(layer >= 0 && layer < dm.Phi.cols(), ErrorKind::Structural, "layer index out of range");
    const Eigen::VectorXd r = (dm.T.col(0) * log_alpha + dm.T.col(1) * beta) - dm.Phi.col(layer);
    return r.squaredNorm();
}

double predict_width(const ScalingParams& params, int layer, double tau) {
    require(layer >= 0 && static_cast<std::size_t>(layer) < params.size(), ErrorKind::Structural,
            "layer index out of range");
    require(tau > 0.0, ErrorKind::Domain, "tau must be positive");
    return params.alpha[layer] * std::pow(tau, params.beta[layer]);
}

}  // namespace neuralscale
