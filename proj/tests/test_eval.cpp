#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/eval.hpp"
#include "rnnfilter/experiment.hpp"
#include "rnnfilter/parallel.hpp"

using namespace rnnfilter;

namespace {

LinearGaussianModel benchmark_scalar() { return LinearGaussianModel::scalar(0.98, 2.0, 25.0); }

EvalReport synthetic_report(std::vector<double> curve) {
    EvalReport report;
    report.n_test = 1;
    report.horizon = static_cast<int>(curve.size());
    MethodCurve mc;
    mc.name = "m";
    mc.rmse_vs_truth.assign(curve.size(), 0.0);
    mc.n_effective.assign(curve.size(), 1);
    mc.rmse_vs_oracle = std::move(curve);
    report.methods.push_back(std::move(mc));
    return report;
}

} // namespace

TEST_CASE("the oracle scored against itself has exactly zero RMSE") {
    const auto model = benchmark_scalar();
    const auto oracle = make_kalman_method(model);
    const auto report =
        evaluate_filters(model, oracle, {make_kalman_method(model, "self")}, 10, 40, 3);
    REQUIRE(report.methods.size() == 1);
    for (double v : report.methods[0].rmse_vs_oracle) CHECK(v == 0.0);
    for (int n : report.methods[0].n_effective) CHECK(n == 10);
}

TEST_CASE("constant-zero predictor RMSE-vs-truth matches the stationary deviation") {
    const auto model = benchmark_scalar();
    const auto report = evaluate_filters(model, make_kalman_method(model),
                                         {make_zero_method(1)}, 400, 50, 99);
    // Var X_t = 25 ~ Q/(1 - alpha^2) = 25.25; sd ~ 5.02
    const double expected = std::sqrt(1.0 / (1.0 - 0.98 * 0.98));
    const auto& curve = report.methods[0].rmse_vs_truth;
    double mean = 0.0;
    for (int t = 10; t <= 50; ++t) mean += curve[static_cast<std::size_t>(t - 1)];
    mean /= 41.0;
    CHECK(mean == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("paired evaluation feeds every method identical observations") {
    const auto model = benchmark_scalar();
    // two copies of a deterministic obs-dependent method must agree exactly
    FilterMethod echo{"echo", [](const Eigen::MatrixXd& obs, int) {
                          return Eigen::MatrixXd(obs);
                      }};
    FilterMethod echo2 = echo;
    echo2.name = "echo2";
    const auto report =
        evaluate_filters(model, make_kalman_method(model), {echo, echo2}, 20, 30, 5);
    CHECK(report.methods[0].rmse_vs_oracle == report.methods[1].rmse_vs_oracle);
    CHECK(report.methods[0].rmse_vs_truth == report.methods[1].rmse_vs_truth);
}

TEST_CASE("wrong-shape output raises a contract violation naming the method") {
    const auto model = benchmark_scalar();
    FilterMethod bad{"short-output", [](const Eigen::MatrixXd& obs, int) {
                         return Eigen::MatrixXd::Zero(1, obs.cols() - 1).eval();
                     }};
    try {
        evaluate_filters(model, make_kalman_method(model), {bad}, 4, 10, 1);
        FAIL("expected ContractViolation");
    } catch (const ContractViolation& e) {
        CHECK(e.method == "short-output");
        CHECK(std::string(e.what()).find("short-output") != std::string::npos);
    }
}

TEST_CASE("non-finite estimates are clamped into overflow markers, never dropped silently") {
    const auto model = benchmark_scalar();
    const double inf = std::numeric_limits<double>::infinity();

    // every trajectory overflows from t = 11 on: curve truncates there
    FilterMethod blows{"blows", [inf](const Eigen::MatrixXd& obs, int) {
                           Eigen::MatrixXd est = Eigen::MatrixXd::Zero(1, obs.cols());
                           est.rightCols(obs.cols() - 10).setConstant(inf);
                           return est;
                       }};
    // only even trajectories overflow: n_effective halves, no truncation
    FilterMethod half{"half", [inf](const Eigen::MatrixXd& obs, int n) {
                          Eigen::MatrixXd est = Eigen::MatrixXd::Zero(1, obs.cols());
                          if (n % 2 == 0) est.rightCols(obs.cols() - 10).setConstant(inf);
                          return est;
                      }};

    const auto report =
        evaluate_filters(model, make_kalman_method(model), {blows, half}, 10, 30, 8);

    const auto& truncated = report.methods[0];
    REQUIRE(truncated.overflow_t.has_value());
    CHECK(*truncated.overflow_t == 11);
    CHECK(truncated.rmse_vs_oracle.size() == 10);
    for (double v : truncated.rmse_vs_oracle) CHECK(std::isfinite(v));

    const auto& partial = report.methods[1];
    CHECK_FALSE(partial.overflow_t.has_value());
    CHECK(partial.n_effective[5] == 10);
    CHECK(partial.n_effective[15] == 5);
    for (double v : partial.rmse_vs_oracle) CHECK(std::isfinite(v));
}

TEST_CASE("accumulation detector: flat vs rising curves, window validation") {
    std::vector<double> flat(100, 0.5);
    const auto flat_report = synthetic_report(flat);
    const auto ok = detect_error_accumulation(flat_report, "m", {10, 30}, {70, 100});
    CHECK_FALSE(ok.flagged);
    CHECK(ok.ratio == doctest::Approx(1.0));

    std::vector<double> rising(100);
    for (int t = 0; t < 100; ++t) rising[static_cast<std::size_t>(t)] = 0.1 * (t + 1);
    const auto bad = detect_error_accumulation(synthetic_report(rising), "m", {1, 10},
                                               {90, 100});
    CHECK(bad.flagged);
    CHECK(bad.ratio > 2.0);

    CHECK_THROWS_AS(
        detect_error_accumulation(flat_report, "m", {30, 10}, {70, 100}),
        DimensionError);
    CHECK_THROWS_AS(
        detect_error_accumulation(flat_report, "m", {10, 80}, {70, 100}),
        DimensionError);
    CHECK_THROWS_AS(
        detect_error_accumulation(flat_report, "missing", {10, 30}, {70, 100}),
        DimensionError);
}

TEST_CASE("a curve that overflowed before the late window counts as accumulating") {
    auto report = synthetic_report(std::vector<double>(40, 1.0));
    report.horizon = 100;
    report.methods[0].overflow_t = 41;
    const auto check = detect_error_accumulation(report, "m", {1, 20}, {80, 100});
    CHECK(check.flagged);
    CHECK(std::isinf(check.ratio));
}

TEST_CASE("kalman-mean contraction estimate matches the closed-form factor") {
    const auto model = benchmark_scalar();
    const double a2 = 0.98 * 0.98, q = 1.0, r = 4.0;
    const double b = q + r * (1.0 - a2);
    const double c_inf = (-b + std::sqrt(b * b + 4.0 * a2 * q * r)) / (2.0 * a2);
    const double k_inf = (a2 * c_inf + q) / (a2 * c_inf + q + r);
    const double kappa_true = std::abs(0.98 * (1.0 - k_inf));

    const auto filter = make_kalman_seeded_filter(model);
    std::vector<Eigen::VectorXd> offsets{Eigen::VectorXd::Constant(1, 5.0),
                                         Eigen::VectorXd::Constant(1, -2.0)};
    const auto est = estimate_contraction(filter, model, 6, offsets, 60, 12);

    CHECK_FALSE(est.upper_bound_only);
    CHECK(std::abs(est.kappa_hat - kappa_true) / kappa_true < 0.05);
    CHECK(est.kappa_hat < 1.0);
    CHECK(est.fit_residual < 0.1);
    CHECK(est.fit_first_lag == 5);
    CHECK(est.fit_last_lag == 50);
    CHECK(est.c_hat > 0.0);
    for (double v : est.per_lag_ratios) CHECK(v > 0.0);
}

TEST_CASE("constant filter: differences vanish, kappa reported as upper bound") {
    const auto model = benchmark_scalar();
    SeededFilter constant{"const", Eigen::VectorXd::Zero(1),
                          [](const Eigen::MatrixXd& obs, const Eigen::VectorXd&) {
                              return Eigen::MatrixXd::Zero(1, obs.cols()).eval();
                          }};
    const auto est = estimate_contraction(constant, model, 3,
                                          {Eigen::VectorXd::Constant(1, 1.0)}, 30, 4);
    CHECK(est.upper_bound_only);
    CHECK(est.kappa_hat > 0.0);
    CHECK(est.kappa_hat <= std::numeric_limits<double>::epsilon());
}

TEST_CASE("evaluation is deterministic and thread-count invariant") {
    const auto model = benchmark_scalar();
    const std::vector<FilterMethod> methods{make_zero_method(1),
                                            make_pf_method(model, 50, 77)};
    set_max_threads(1);
    const auto a = evaluate_filters(model, make_kalman_method(model), methods, 30, 40, 6);
    set_max_threads(2);
    const auto b = evaluate_filters(model, make_kalman_method(model), methods, 30, 40, 6);
    set_max_threads(0);

    std::ostringstream sa, sb;
    write_eval_report_csv(sa, a);
    write_eval_report_csv(sb, b);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("report and contraction CSV schemas") {
    const auto model = benchmark_scalar();
    const auto report = evaluate_filters(model, make_kalman_method(model),
                                         {make_zero_method(1, "zero")}, 3, 5, 2);
    std::ostringstream ss;
    write_eval_report_csv(ss, report);
    std::istringstream lines(ss.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "method,t,rmse_vs_oracle,rmse_vs_truth,n_effective");
    std::getline(lines, line);
    CHECK(line.rfind("zero,1,", 0) == 0);

    const auto filter = make_kalman_seeded_filter(model);
    const auto est = estimate_contraction(filter, model, 2,
                                          {Eigen::VectorXd::Constant(1, 1.0)}, 20, 1);
    std::ostringstream cs;
    write_contraction_csv(cs, est);
    std::istringstream clines(cs.str());
    std::getline(clines, line);
    CHECK(line == "lag,mean_sq_diff_root");
    int rows = 0;
    while (std::getline(clines, line)) ++rows;
    CHECK(rows == 20);
}
