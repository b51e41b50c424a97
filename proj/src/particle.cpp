#include "rnnfilter/particle.hpp"

#include <cmath>

#include "rnnfilter/errors.hpp"

namespace rnnfilter {

namespace {
// log(1e-300): below this total unnormalized log-weight the ensemble is dead.
const double kLogDegeneracy = std::log(1e-300);
} // namespace

ParticleEnsemble pf_init(const LinearGaussianModel& model, int count_P, std::uint64_t seed) {
    model.validate();
    if (count_P < 1) throw DimensionError("pf_init: count_P must be >= 1");

    const int dx = model.state_dim();
    const Eigen::MatrixXd c0_factor = covariance_factor(model.init_cov);
    RngStream rng(seed, 0);

    ParticleEnsemble ens;
    ens.particles.resize(dx, count_P);
    Eigen::VectorXd z(dx);
    for (int p = 0; p < count_P; ++p) {
        for (int i = 0; i < dx; ++i) z[i] = rng.normal();
        ens.particles.col(p) = model.init_mean + c0_factor * z;
    }
    ens.weights = Eigen::VectorXd::Constant(count_P, 1.0 / count_P);
    ens.ess = count_P;
    ens.t = 0;
    return ens;
}

ParticleEnsemble pf_step(const LinearGaussianModel& model, const ParticleEnsemble& ens,
                         const Eigen::VectorXd& y, RngStream& rng) {
    const int dx = model.state_dim();
    const auto count_P = static_cast<int>(ens.particles.cols());
    if (ens.particles.rows() != dx)
        throw DimensionError("pf_step: particle dimension mismatch");
    if (y.size() != model.obs_dim())
        throw DimensionError("pf_step: observation dimension mismatch");
    const int step_t = ens.t + 1;

    // propagate through the transition
    const Eigen::MatrixXd q_factor = covariance_factor(model.q_cov);
    Eigen::MatrixXd propagated = model.f_matrix * ens.particles;
    Eigen::VectorXd z(dx);
    for (int p = 0; p < count_P; ++p) {
        for (int i = 0; i < dx; ++i) z[i] = rng.normal();
        propagated.col(p) += q_factor * z;
    }

    // log-likelihood weights: -(y - H x)^T R^{-1} (y - H x) / 2, computed via
    // the Cholesky half-solve so accurate observations underflow gracefully
    Eigen::MatrixXd residuals = (-(model.h_matrix * propagated)).colwise() + y;
    const Eigen::LLT<Eigen::MatrixXd> r_llt(model.r_cov);
    const Eigen::MatrixXd half = r_llt.matrixL().solve(residuals);
    Eigen::VectorXd log_w = -0.5 * half.colwise().squaredNorm().transpose();

    const double max_lw = log_w.maxCoeff();
    Eigen::VectorXd weights = (log_w.array() - max_lw).exp();
    const double total = weights.sum();
    if (!std::isfinite(max_lw) || !(total > 0.0) ||
        max_lw + std::log(total) < kLogDegeneracy) {
        throw ParticleDegeneracy(
            "pf_step: all particle weights numerically zero at t=" + std::to_string(step_t),
            step_t);
    }
    weights /= total;

    ParticleEnsemble next;
    next.t = step_t;
    next.ess = 1.0 / weights.squaredNorm();

    // unconditional systematic resampling back to uniform weights
    const auto counts = systematic_resample_counts(weights, rng.uniform());
    next.particles.resize(dx, count_P);
    int out = 0;
    for (int p = 0; p < count_P; ++p) {
        for (int c = 0; c < counts[static_cast<std::size_t>(p)]; ++c) {
            next.particles.col(out++) = propagated.col(p);
        }
    }
    next.weights = Eigen::VectorXd::Constant(count_P, 1.0 / count_P);
    return next;
}

Eigen::VectorXd pf_estimate(const ParticleEnsemble& ens) {
    return ens.particles * ens.weights;
}

std::vector<int> systematic_resample_counts(const Eigen::VectorXd& weights, double u01) {
    const auto count_P = static_cast<int>(weights.size());
    if (count_P < 1) throw DimensionError("systematic_resample_counts: empty weights");
    if (!(u01 >= 0.0 && u01 < 1.0))
        throw DimensionError("systematic_resample_counts: u01 must be in [0,1)");

    std::vector<int> counts(static_cast<std::size_t>(count_P), 0);
    int j = 0;
    double cumulative = weights[0];
    for (int i = 0; i < count_P; ++i) {
        const double position = (i + u01) / count_P;
        while (position >= cumulative && j + 1 < count_P) {
            ++j;
            cumulative += weights[j];
        }
        ++counts[static_cast<std::size_t>(j)];
    }
    return counts;
}

Eigen::MatrixXd pf_mean_sequence(const LinearGaussianModel& model,
                                 const Eigen::MatrixXd& observations, int count_P,
                                 std::uint64_t seed) {
    ParticleEnsemble ens = pf_init(model, count_P, seed);
    RngStream rng(seed, 1);
    Eigen::MatrixXd estimates(model.state_dim(), observations.cols());
    for (Eigen::Index t = 0; t < observations.cols(); ++t) {
        ens = pf_step(model, ens, observations.col(t), rng);
        estimates.col(t) = pf_estimate(ens);
    }
    return estimates;
}

} // namespace rnnfilter
