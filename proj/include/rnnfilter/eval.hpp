// Scoring of approximate filters against the Kalman oracle, error-accumulation
// detection, and the empirical contraction probe.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rnnfilter/kalman.hpp"
#include "rnnfilter/model.hpp"

namespace rnnfilter {

// A filter under evaluation: consumes a d_y x T observation sequence, emits a
// d_x x T mean-estimate sequence. traj_index identifies the paired test
// trajectory so stochastic methods can derive a per-trajectory RNG stream.
struct FilterMethod {
    std::string name;
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& observations, int traj_index)> run;
};

struct MethodCurve {
    std::string name;
    // Indexed by t-1 for t = 1..T; truncated at overflow_t when set.
    std::vector<double> rmse_vs_oracle;
    std::vector<double> rmse_vs_truth;
    std::vector<int> n_effective;
    // First t (1-based) at which every remaining trajectory had turned
    // non-finite; the explicit overflow marker, never silently dropped.
    std::optional<int> overflow_t;
};

struct EvalReport {
    std::vector<MethodCurve> methods;
    int n_test = 0;
    int horizon = 0;
    std::uint64_t seed = 0;
    std::string config_echo;
};

// Samples n_test fresh trajectories, runs the oracle and every method on
// identical observations, and reduces per-time-step RMSE curves against the
// oracle mean and against the latent truth. A trajectory whose estimate turns
// non-finite at step tau stops contributing from tau on (n_effective drops).
// Throws ContractViolation if a method emits the wrong shape.
EvalReport evaluate_filters(const LinearGaussianModel& model, const FilterMethod& oracle,
                            const std::vector<FilterMethod>& methods, int n_test,
                            int horizon_T_test, std::uint64_t seed);

struct AccumulationCheck {
    bool flagged = false;
    double ratio = 0.0; // late-window mean / early-window mean; +inf if overflowed
    double early_mean = 0.0;
    double late_mean = 0.0;
    double threshold = 0.0;
};

// Windows are inclusive 1-based [first, last] ranges of t; they must lie in
// the horizon and not overlap. A curve that overflowed before the late window
// ends is treated as accumulating (ratio +inf).
AccumulationCheck detect_error_accumulation(const EvalReport& report,
                                            const std::string& method,
                                            std::pair<int, int> early_window,
                                            std::pair<int, int> late_window,
                                            double threshold = 2.0);

// A filter exposing an initial-state override, for the contraction probe.
// The override lives in the filter's own state space (Kalman: initial mean;
// RNN: stacked initial hidden state).
struct SeededFilter {
    std::string name;
    Eigen::VectorXd base_init;
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& observations,
                                  const Eigen::VectorXd& init)>
        run;
};

struct ContractionEstimate {
    double kappa_hat = 0.0; // fitted per-step contraction factor
    double c_hat = 0.0;     // fitted constant C of rms(t) ~ C kappa^t
    // rms difference per lag t = 1..horizon, relative to the first lag;
    // truncated before the first exact zero so entries stay positive.
    std::vector<double> per_lag_ratios;
    std::vector<double> per_lag_rms; // raw rms difference per lag, full length
    double fit_residual = 0.0;       // rms residual of the log-space fit
    // Differences vanished before the fit window: kappa_hat is then only an
    // upper bound (reported as machine epsilon).
    bool upper_bound_only = false;
    int fit_first_lag = 0;
    int fit_last_lag = 0;
};

// Runs the filter twice per pair on identical observations from base_init and
// base_init + offset (offsets cycled across pairs), averages squared output
// differences per lag across pairs, and fits log rms(t) = log C + t log kappa
// by least squares over lags [burn_in, max_fit_lag].
ContractionEstimate estimate_contraction(const SeededFilter& filter,
                                         const LinearGaussianModel& model, int n_pairs,
                                         const std::vector<Eigen::VectorXd>& init_offsets,
                                         int horizon, std::uint64_t seed, int burn_in = 5,
                                         int max_fit_lag = 50);

// CSV: method,t,rmse_vs_oracle,rmse_vs_truth,n_effective (one header row).
void write_eval_report_csv(std::ostream& os, const EvalReport& report);
// CSV: lag,mean_sq_diff_root.
void write_contraction_csv(std::ostream& os, const ContractionEstimate& estimate);

} // namespace rnnfilter
