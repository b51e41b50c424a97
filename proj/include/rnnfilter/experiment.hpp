// Experiment orchestration: config parsing, the train/evaluate pipeline, the
// self-check battery, and fixture export. The CLI binary is a thin wrapper
// over these entry points.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/eval.hpp"
#include "rnnfilter/model.hpp"
#include "rnnfilter/rnn.hpp"
#include "rnnfilter/train.hpp"

namespace rnnfilter {

struct ExperimentConfig {
    LinearGaussianModel model;

    RnnVariant rnn_variant = RnnVariant::Recursive;
    std::vector<int> rnn_widths;

    TrainConfig train; // seed filled from master_seed at run time

    int particle_count = 1000;
    bool particle_enabled = true;

    int n_test = 1000;
    int horizon_T_test = 2000;
    std::pair<int, int> early_window{100, 300};
    std::pair<int, int> late_window{1800, 2000};
    double accumulation_threshold = 2.0;

    std::string output_directory = "out";
    std::vector<std::string> output_formats{"csv"};

    std::uint64_t master_seed = 0;

    void validate() const; // throws ConfigError naming the offending field
};

// JSON schema documented in the README. Errors carry the dotted field path.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& config); // canonical echo

// Per-purpose sub-seeds derived from the master seed; recorded in the
// run manifest.
struct DerivedSeeds {
    std::uint64_t train_data = 0;
    std::uint64_t train = 0; // feeds TrainConfig.seed ("init", "minibatch-order")
    std::uint64_t test_data = 0;
    std::uint64_t particle = 0;
};
DerivedSeeds derive_experiment_seeds(std::uint64_t master_seed);

// Filter-method factories shared by the pipeline, tests, and the acceptance
// suite. All capture by value and are safe to run concurrently.
FilterMethod make_kalman_method(const LinearGaussianModel& model,
                                std::string name = "kalman");
FilterMethod make_rnn_method(const RnnTopology& topology, const RnnParams& params,
                             std::string name = "rnn");
FilterMethod make_pf_method(const LinearGaussianModel& model, int particle_count,
                            std::uint64_t seed, std::string name = "pf");
FilterMethod make_zero_method(int state_dim, std::string name = "zero");

// Contraction-probe views: Kalman with an initial-mean override, RNN with a
// stacked initial-hidden-state override.
SeededFilter make_kalman_seeded_filter(const LinearGaussianModel& model);
SeededFilter make_rnn_seeded_filter(const RnnTopology& topology, const RnnParams& params);

struct RunOutcome {
    std::filesystem::path output_directory;
    EvalReport report;
    std::vector<double> loss_history;
    std::map<std::string, AccumulationCheck> accumulation; // per approximate method
    double wall_clock_seconds = 0.0;
};

// Full pipeline: sample training data, train the RNN, evaluate RNN / particle
// filter / Kalman / zero baseline on shared test observations, write
// eval_report.csv, loss_history.csv, rnn_checkpoint.bin and
// run_manifest.json into the output directory. The RNNFILTER_OUTPUT_DIR
// environment variable overrides config.output_directory.
RunOutcome run_experiment(const ExperimentConfig& config);

// Exit-code semantics of the `run` subcommand: 0 success, 2 config error,
// 1 anything else (e.g. training divergence; partial artifacts are kept).
int run_experiment_cli(const std::filesystem::path& config_path, std::ostream& out,
                       std::ostream& err);

struct CheckOutcome {
    std::string name;
    bool passed = false;
    std::string detail;
};

// BPTT-vs-central-difference comparison on a small instance. Data and
// parameter seeds are advanced from base_seed until every pre-activation on
// the unroll stays at least kink_margin away from the ReLU kink, so the two
// routes are comparable. corrupt perturbs one BPTT entry (mutation probe).
struct GradientCheckResult {
    double max_rel_error = 0.0;
    int entries = 0;
    std::uint64_t seed_used = 0;
    double min_abs_preactivation = 0.0;
};
GradientCheckResult run_gradient_check(const RnnTopology& topology, int horizon_T,
                                       int count_N, double h, double kink_margin,
                                       std::uint64_t base_seed, bool corrupt = false);

// Fast oracle battery: BPTT-vs-finite-difference gradient check, Riccati
// closed-form check, memorization exactness, systematic-resampling
// unbiasedness. corrupt_gradient perturbs one gradient entry first (mutation
// probe: proves the check can fail).
std::vector<CheckOutcome> verify_suite(bool corrupt_gradient = false);
int verify_suite_cli(std::ostream& out, bool corrupt_gradient = false);

// Writes trajectories.csv and kalman_trace.csv reference fixtures for
// cross-implementation diffing.
void export_fixtures(const std::filesystem::path& directory);

} // namespace rnnfilter
