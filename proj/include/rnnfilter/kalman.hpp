// Exact Kalman filter: the optimal-filter oracle for linear-Gaussian models.
#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "rnnfilter/model.hpp"

namespace rnnfilter {

struct KalmanState {
    Eigen::VectorXd mean; // conditional mean of X_t given Y_1..Y_t
    Eigen::MatrixXd cov;  // conditional covariance, kept symmetric
    Eigen::MatrixXd gain; // gain of the most recent update; zero at t = 0
    int t = 0;
};

KalmanState kalman_init(const LinearGaussianModel& model);

// One update:
//   P = F C F^T + Q
//   K = P H^T [R + H P H^T]^{-1}          (Cholesky solve, no explicit inverse)
//   mean <- (F - K H F) mean + K y
//   cov  <- (I - K H) P, then symmetrized
// Throws SingularityError when the innovation covariance has condition
// number > 1e14.
KalmanState kalman_step(const LinearGaussianModel& model, const KalmanState& prev,
                        const Eigen::VectorXd& y);

// Fold of kalman_step over the columns of `observations` (d_y x T), starting
// from (init_mean, init_cov). Returns T+1 states; index 0 is the prior, index
// t the posterior after Y_t.
std::vector<KalmanState> kalman_filter(const LinearGaussianModel& model,
                                       const Eigen::MatrixXd& observations);

// Filtered means only, d_x x T (prior state omitted). Scoring convenience.
Eigen::MatrixXd kalman_mean_sequence(const LinearGaussianModel& model,
                                     const Eigen::MatrixXd& observations);

// Iterates the covariance recursion from init_cov until
// max |C_{k+1} - C_k| < tol; returns the steady state C_inf. Throws
// RiccatiNonConvergence (carrying the last iterate) after max_iter steps.
Eigen::MatrixXd riccati_fixed_point(const LinearGaussianModel& model, double tol,
                                    int max_iter);

// Transition matrix of the stacked (filter mean, signal) system:
//   [ F - K H F   K H F ]
//   [     0         F   ]
// Block triangular, so its spectrum is the union of the diagonal blocks'.
Eigen::MatrixXd stacked_transition(const LinearGaussianModel& model,
                                   const Eigen::MatrixXd& gain);

// Trace CSV: t, mean_1..mean_dx, cov entries row-major, gain entries
// row-major. One row per state, including t = 0.
void write_filter_trace_csv(std::ostream& os, const std::vector<KalmanState>& states);

} // namespace rnnfilter
