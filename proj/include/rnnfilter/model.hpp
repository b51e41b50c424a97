// Linear-Gaussian state-space models and trajectory simulation.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace rnnfilter {

// X_t = F X_{t-1} + V_t,  V_t ~ N(0, Q)
// Y_t = H X_t + W_t,      W_t ~ N(0, R)
// X_0 ~ N(init_mean, init_cov)
struct LinearGaussianModel {
    Eigen::MatrixXd f_matrix;  // d_x x d_x
    Eigen::MatrixXd h_matrix;  // d_y x d_x
    Eigen::MatrixXd q_cov;     // d_x x d_x, symmetric PSD
    Eigen::MatrixXd r_cov;     // d_y x d_y, symmetric PD
    Eigen::VectorXd init_mean; // d_x
    Eigen::MatrixXd init_cov;  // d_x x d_x, symmetric PSD

    int state_dim() const { return static_cast<int>(f_matrix.rows()); }
    int obs_dim() const { return static_cast<int>(h_matrix.rows()); }

    // Throws InvalidModelError on inconsistent dimensions, asymmetry,
    // indefinite Q/init_cov, or non-PD R.
    void validate() const;

    // Scalar benchmark family: X_t = alpha X_{t-1} + V_t, Y_t = X_t + beta W_t
    // with V_t, W_t standard Gaussian.
    static LinearGaussianModel scalar(double alpha, double beta, double init_var,
                                      double init_mean = 0.0);
};

// Sampled trajectories, trajectory-major. states[n] is d_x x (T+1) with
// column t = X_t (t = 0..T); observations[n] is d_y x T with column t-1 = Y_t
// (t = 1..T), i.e. observation column j observes state column j+1.
struct TrajectoryBatch {
    std::vector<Eigen::MatrixXd> states;
    std::vector<Eigen::MatrixXd> observations;
    std::uint64_t seed = 0;

    int count() const { return static_cast<int>(states.size()); }
    int horizon() const { return states.empty() ? 0 : static_cast<int>(states[0].cols()) - 1; }
    int state_dim() const { return states.empty() ? 0 : static_cast<int>(states[0].rows()); }
    int obs_dim() const {
        return observations.empty() ? 0 : static_cast<int>(observations[0].rows());
    }
};

// Draws count_N independent trajectories of length horizon_T. Trajectory n
// uses RNG stream n of the given seed, so output is bit-identical for a fixed
// (model, T, N, seed) regardless of thread count or generation order.
TrajectoryBatch sample_trajectories(const LinearGaussianModel& model, int horizon_T,
                                    int count_N, std::uint64_t seed);

// max |eigenvalue|; throws DimensionError for non-square or non-finite input.
double spectral_radius(const Eigen::MatrixXd& m);

struct StationarityDiagnostic {
    bool stationary = false;
    double spectral_radius = 0.0;
    double tol_margin = 0.0; // stationary iff radius < 1 - tol_margin
};

StationarityDiagnostic check_stationarity_condition(const LinearGaussianModel& model,
                                                    double tol_margin = 0.0);

// Factor A with A A^T = cov. Cholesky when PD; otherwise eigendecomposition
// with eigenvalues in [-1e-10, 0) clamped to zero. More negative spectra are
// rejected with InvalidModelError.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov);

// CSV fixture. Columns: n,t,x_1..x_dx,y_1..y_dy; t = 0 rows leave the y
// fields empty. Doubles are written shortest-round-trip, so write/read is
// value-exact. The batch seed is not part of the fixture.
void write_batch_csv(std::ostream& os, const TrajectoryBatch& batch);
TrajectoryBatch read_batch_csv(std::istream& is);

} // namespace rnnfilter
