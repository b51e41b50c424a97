// Bootstrap particle filter with unconditional systematic resampling.
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "rnnfilter/model.hpp"
#include "rnnfilter/rng.hpp"

namespace rnnfilter {

struct ParticleEnsemble {
    Eigen::MatrixXd particles; // d_x x P, one column per particle
    Eigen::VectorXd weights;   // normalized; uniform after each resampling
    double ess = 0.0;          // effective sample size before the last resampling
    int t = 0;
};

// Particles i.i.d. from N(init_mean, init_cov), uniform weights. Draws from
// RNG stream 0 of `seed`.
ParticleEnsemble pf_init(const LinearGaussianModel& model, int count_P, std::uint64_t seed);

// One bootstrap step: propagate through the transition, weight by the
// Gaussian observation likelihood (in log space), record ESS, then resample
// systematically back to uniform weights. Throws ParticleDegeneracy when the
// total unnormalized weight falls below 1e-300.
ParticleEnsemble pf_step(const LinearGaussianModel& model, const ParticleEnsemble& ens,
                         const Eigen::VectorXd& y, RngStream& rng);

// Weighted particle mean.
Eigen::VectorXd pf_estimate(const ParticleEnsemble& ens);

// Copy count per particle for one systematic draw with offset u01 in [0, 1):
// grid positions (i + u01)/P walked against the cumulative weights.
// E[counts[i]] over uniform u01 equals P * weights[i].
std::vector<int> systematic_resample_counts(const Eigen::VectorXd& weights, double u01);

// Full filter run used for scoring: init from stream (seed, 0), per-step
// noise from stream (seed, 1). Returns d_x x T mean estimates.
Eigen::MatrixXd pf_mean_sequence(const LinearGaussianModel& model,
                                 const Eigen::MatrixXd& observations, int count_P,
                                 std::uint64_t seed);

} // namespace rnnfilter
