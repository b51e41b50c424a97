#include "rnnfilter/eval.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/parallel.hpp"
#include "csv_util.hpp"

namespace rnnfilter {

namespace {

constexpr int kEvalBlock = 64; // trajectories per parallel block

// Per-trajectory squared errors for one method; NaN marks overflow onward.
struct TrajErrors {
    std::vector<double> sq_vs_oracle;
    std::vector<double> sq_vs_truth;
};

TrajErrors score_trajectory(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& oracle,
                            const Eigen::MatrixXd& states) {
    const auto T = estimate.cols();
    TrajErrors err{std::vector<double>(static_cast<std::size_t>(T)),
                   std::vector<double>(static_cast<std::size_t>(T))};
    bool overflowed = false;
    for (Eigen::Index t = 0; t < T; ++t) {
        if (!overflowed && !estimate.col(t).allFinite()) overflowed = true;
        if (overflowed) {
            err.sq_vs_oracle[static_cast<std::size_t>(t)] =
                std::numeric_limits<double>::quiet_NaN();
            err.sq_vs_truth[static_cast<std::size_t>(t)] =
                std::numeric_limits<double>::quiet_NaN();
            continue;
        }
        err.sq_vs_oracle[static_cast<std::size_t>(t)] =
            (estimate.col(t) - oracle.col(t)).squaredNorm();
        err.sq_vs_truth[static_cast<std::size_t>(t)] =
            (estimate.col(t) - states.col(t + 1)).squaredNorm();
    }
    return err;
}

} // namespace

EvalReport evaluate_filters(const LinearGaussianModel& model, const FilterMethod& oracle,
                            const std::vector<FilterMethod>& methods, int n_test,
                            int horizon_T_test, std::uint64_t seed) {
    if (n_test < 1) throw DimensionError("evaluate_filters: n_test must be positive");
    if (horizon_T_test < 1)
        throw DimensionError("evaluate_filters: horizon_T_test must be positive");
    if (!oracle.run) throw ContractViolation("oracle method has no callable", oracle.name);
    for (const auto& m : methods) {
        if (!m.run) throw ContractViolation("method has no callable", m.name);
    }

    const int dx = model.state_dim();
    const auto T = static_cast<std::size_t>(horizon_T_test);
    const auto n_methods = methods.size();

    const TrajectoryBatch batch =
        sample_trajectories(model, horizon_T_test, n_test, seed);

    // accumulators, filled in fixed trajectory order
    std::vector<std::vector<double>> sum_oracle(n_methods, std::vector<double>(T, 0.0));
    std::vector<std::vector<double>> sum_truth(n_methods, std::vector<double>(T, 0.0));
    std::vector<std::vector<int>> n_eff(n_methods, std::vector<int>(T, 0));

    auto check_shape = [&](const Eigen::MatrixXd& est, const std::string& name) {
        if (est.rows() != dx || est.cols() != horizon_T_test)
            throw ContractViolation("method '" + name + "' emitted shape " +
                                        std::to_string(est.rows()) + "x" +
                                        std::to_string(est.cols()) + ", expected " +
                                        std::to_string(dx) + "x" +
                                        std::to_string(horizon_T_test),
                                    name);
    };

    std::vector<std::vector<TrajErrors>> block_errors;
    for (int block_start = 0; block_start < n_test; block_start += kEvalBlock) {
        const int block_size = std::min(kEvalBlock, n_test - block_start);
        block_errors.assign(static_cast<std::size_t>(block_size), {});

        parallel_for(block_size, [&](int i) {
            const int n = block_start + i;
            const auto& obs = batch.observations[static_cast<std::size_t>(n)];
            const auto& states = batch.states[static_cast<std::size_t>(n)];
            const Eigen::MatrixXd oracle_est = oracle.run(obs, n);
            check_shape(oracle_est, oracle.name);
            auto& slot = block_errors[static_cast<std::size_t>(i)];
            slot.reserve(n_methods);
            for (const auto& m : methods) {
                const Eigen::MatrixXd est = m.run(obs, n);
                check_shape(est, m.name);
                slot.push_back(score_trajectory(est, oracle_est, states));
            }
        });

        for (int i = 0; i < block_size; ++i) {
            for (std::size_t m = 0; m < n_methods; ++m) {
                const auto& err = block_errors[static_cast<std::size_t>(i)][m];
                for (std::size_t t = 0; t < T; ++t) {
                    if (std::isnan(err.sq_vs_oracle[t])) continue;
                    sum_oracle[m][t] += err.sq_vs_oracle[t];
                    sum_truth[m][t] += err.sq_vs_truth[t];
                    n_eff[m][t] += 1;
                }
            }
        }
    }

    EvalReport report;
    report.n_test = n_test;
    report.horizon = horizon_T_test;
    report.seed = seed;
    for (std::size_t m = 0; m < n_methods; ++m) {
        MethodCurve curve;
        curve.name = methods[m].name;
        for (std::size_t t = 0; t < T; ++t) {
            if (n_eff[m][t] == 0) {
                // every surviving trajectory has overflowed: truncate here
                curve.overflow_t = static_cast<int>(t) + 1;
                break;
            }
            curve.rmse_vs_oracle.push_back(std::sqrt(sum_oracle[m][t] / n_eff[m][t]));
            curve.rmse_vs_truth.push_back(std::sqrt(sum_truth[m][t] / n_eff[m][t]));
            curve.n_effective.push_back(n_eff[m][t]);
        }
        report.methods.push_back(std::move(curve));
    }
    return report;
}

namespace {

const MethodCurve& find_method(const EvalReport& report, const std::string& method) {
    for (const auto& c : report.methods) {
        if (c.name == method) return c;
    }
    throw DimensionError("no method named '" + method + "' in report");
}

double window_mean(const std::vector<double>& curve, std::pair<int, int> window,
                   bool* covered) {
    // window bounds are 1-based inclusive in t
    const int first = window.first, last = window.second;
    double sum = 0.0;
    int count = 0;
    for (int t = first; t <= last; ++t) {
        if (static_cast<std::size_t>(t - 1) >= curve.size()) {
            *covered = false;
            break;
        }
        sum += curve[static_cast<std::size_t>(t - 1)];
        ++count;
    }
    return count > 0 ? sum / count : 0.0;
}

} // namespace

AccumulationCheck detect_error_accumulation(const EvalReport& report,
                                            const std::string& method,
                                            std::pair<int, int> early_window,
                                            std::pair<int, int> late_window,
                                            double threshold) {
    for (auto w : {early_window, late_window}) {
        if (w.first < 1 || w.second < w.first)
            throw DimensionError("detect_error_accumulation: empty or invalid window");
        if (w.second > report.horizon)
            throw DimensionError("detect_error_accumulation: window beyond horizon");
    }
    if (early_window.second >= late_window.first)
        throw DimensionError("detect_error_accumulation: windows must not overlap");

    const auto& curve = find_method(report, method);
    AccumulationCheck check;
    check.threshold = threshold;
    bool early_covered = true, late_covered = true;
    check.early_mean = window_mean(curve.rmse_vs_oracle, early_window, &early_covered);
    check.late_mean = window_mean(curve.rmse_vs_oracle, late_window, &late_covered);

    if (!early_covered || !late_covered) {
        // the curve overflowed before the window ended; that is accumulation
        check.ratio = std::numeric_limits<double>::infinity();
        check.flagged = true;
        return check;
    }
    if (check.early_mean == 0.0) {
        check.ratio = check.late_mean == 0.0 ? 1.0
                                             : std::numeric_limits<double>::infinity();
    } else {
        check.ratio = check.late_mean / check.early_mean;
    }
    check.flagged = check.ratio > threshold;
    return check;
}

ContractionEstimate estimate_contraction(const SeededFilter& filter,
                                         const LinearGaussianModel& model, int n_pairs,
                                         const std::vector<Eigen::VectorXd>& init_offsets,
                                         int horizon, std::uint64_t seed, int burn_in,
                                         int max_fit_lag) {
    if (n_pairs < 1) throw DimensionError("estimate_contraction: n_pairs must be positive");
    if (init_offsets.empty())
        throw DimensionError("estimate_contraction: need at least one offset");
    for (const auto& o : init_offsets) {
        if (o.size() != filter.base_init.size())
            throw DimensionError("estimate_contraction: offset dimension mismatch");
    }
    if (horizon < 2) throw DimensionError("estimate_contraction: horizon too short");

    const TrajectoryBatch batch = sample_trajectories(model, horizon, n_pairs, seed);
    const auto T = static_cast<std::size_t>(horizon);

    std::vector<std::vector<double>> sq(static_cast<std::size_t>(n_pairs));
    parallel_for(n_pairs, [&](int pair) {
        const auto& obs = batch.observations[static_cast<std::size_t>(pair)];
        const Eigen::VectorXd& offset =
            init_offsets[static_cast<std::size_t>(pair) % init_offsets.size()];
        const Eigen::MatrixXd base = filter.run(obs, filter.base_init);
        const Eigen::MatrixXd perturbed = filter.run(obs, filter.base_init + offset);
        if (base.cols() != horizon || perturbed.cols() != horizon)
            throw ContractViolation("seeded filter emitted wrong horizon", filter.name);
        auto& out = sq[static_cast<std::size_t>(pair)];
        out.resize(T);
        for (std::size_t t = 0; t < T; ++t) {
            out[t] = (base.col(static_cast<Eigen::Index>(t)) -
                      perturbed.col(static_cast<Eigen::Index>(t)))
                         .squaredNorm();
        }
    });
    tree_reduce_in_place(sq, [&](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t t = 0; t < T; ++t) a[t] += b[t];
    });

    ContractionEstimate est;
    est.per_lag_rms.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        est.per_lag_rms[t] = std::sqrt(sq[0][t] / n_pairs);
    for (std::size_t t = 0; t < T; ++t) {
        if (!(est.per_lag_rms[t] > 0.0)) break;
        est.per_lag_ratios.push_back(est.per_lag_rms[t] / est.per_lag_rms[0]);
    }

    // least squares of log rms(t) = log C + t log kappa over the fit window
    const int fit_last = std::min(max_fit_lag, horizon);
    std::vector<std::pair<double, double>> points; // (t, log rms)
    for (int t = burn_in; t <= fit_last; ++t) {
        const double v = est.per_lag_rms[static_cast<std::size_t>(t - 1)];
        if (!(v > 0.0)) break; // differences already vanished
        points.emplace_back(static_cast<double>(t), std::log(v));
    }
    est.fit_first_lag = burn_in;
    est.fit_last_lag = points.empty()
                           ? burn_in
                           : static_cast<int>(points.back().first);

    if (points.size() < 2) {
        // early convergence: report only an upper bound
        est.upper_bound_only = true;
        est.kappa_hat = std::numeric_limits<double>::epsilon();
        est.c_hat = est.per_lag_rms[0] > 0.0 ? est.per_lag_rms[0]
                                             : std::numeric_limits<double>::epsilon();
        est.fit_residual = 0.0;
        return est;
    }

    double st = 0, sy = 0, stt = 0, sty = 0;
    for (const auto& [t, y] : points) {
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    const auto n = static_cast<double>(points.size());
    const double slope = (n * sty - st * sy) / (n * stt - st * st);
    const double intercept = (sy - slope * st) / n;
    est.kappa_hat = std::exp(slope);
    est.c_hat = std::exp(intercept);
    double rss = 0;
    for (const auto& [t, y] : points) {
        const double r = y - (intercept + slope * t);
        rss += r * r;
    }
    est.fit_residual = std::sqrt(rss / n);
    return est;
}

void write_eval_report_csv(std::ostream& os, const EvalReport& report) {
    os << "method,t,rmse_vs_oracle,rmse_vs_truth,n_effective\n";
    for (const auto& curve : report.methods) {
        for (std::size_t t = 0; t < curve.rmse_vs_oracle.size(); ++t) {
            os << curve.name << ',' << (t + 1) << ','
               << detail::format_double(curve.rmse_vs_oracle[t]) << ','
               << detail::format_double(curve.rmse_vs_truth[t]) << ','
               << curve.n_effective[t] << "\n";
        }
        if (curve.overflow_t) {
            os << curve.name << ',' << *curve.overflow_t << ",overflow,overflow,0\n";
        }
    }
}

void write_contraction_csv(std::ostream& os, const ContractionEstimate& estimate) {
    os << "lag,mean_sq_diff_root\n";
    for (std::size_t t = 0; t < estimate.per_lag_rms.size(); ++t) {
        os << (t + 1) << ',' << detail::format_double(estimate.per_lag_rms[t]) << "\n";
    }
}

} // namespace rnnfilter
