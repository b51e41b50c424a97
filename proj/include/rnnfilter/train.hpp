// Backpropagation through time for the mean-square estimation loss, with a
// finite-difference gradient oracle and a minibatch optimizer.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "rnnfilter/model.hpp"
#include "rnnfilter/rnn.hpp"

namespace rnnfilter {

// rho: maps a latent state to the regression target. Empty means identity,
// i.e. the network estimates the conditional mean of X_t.
using TargetFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
    int horizon_T_train = 0;
    int count_N_train = 0;
    int epochs = 1;
    int minibatch_size = 1;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    AdamParams adam;
    std::optional<double> grad_clip_norm = 5.0; // global norm; nullopt disables
    bool train_s0 = true;
    std::uint64_t seed = 0;

    void validate() const; // throws ConfigError
};

// Same shape tree as RnnParams, one real per parameter entry.
struct GradientBundle {
    RnnParams grad;
    double loss = 0.0;
};

// (1/(|S| T)) sum_{n in S} sum_t || output_t^(n) - rho(X_t^(n)) ||^2 over the
// given trajectory subset. Throws NumericError naming (n, t) if the loss
// turns non-finite.
double empirical_loss_subset(const RnnTopology& topology, const RnnParams& params,
                             const TrajectoryBatch& batch, std::span<const int> indices,
                             const TargetFn& target = {});

double empirical_loss(const RnnTopology& topology, const RnnParams& params,
                      const TrajectoryBatch& batch, const TargetFn& target = {});

// Exact reverse-mode gradient of the empirical loss, unrolled over the full
// horizon (no truncation). ReLU subgradient at exactly zero is taken as zero.
GradientBundle grad_bptt_subset(const RnnTopology& topology, const RnnParams& params,
                                const TrajectoryBatch& batch, std::span<const int> indices,
                                const TargetFn& target = {});

GradientBundle grad_bptt(const RnnTopology& topology, const RnnParams& params,
                         const TrajectoryBatch& batch, const TargetFn& target = {});

// Independent oracle: central differences (L(p + h e_i) - L(p - h e_i)) / 2h
// per coordinate.
GradientBundle finite_diff_grad(const RnnTopology& topology, const RnnParams& params,
                                const TrajectoryBatch& batch, const TargetFn& target,
                                double h);

struct TrainResult {
    RnnParams params;
    // loss_history[0] is the initial full-batch loss, then one entry per epoch.
    std::vector<double> loss_history;
};

// Minibatch gradient descent. Deterministic given config.seed: parameter
// init uses derive_seed(seed, "init"), shuffling derive_seed(seed,
// "minibatch-order"). Gradients within a minibatch are computed per
// trajectory and combined by a fixed-order tree sum, so results do not depend
// on the worker count. Throws TrainingDiverged (carrying the history so far)
// if the loss turns non-finite or exceeds 1e6 x the initial loss.
TrainResult train(const TrainConfig& config, const RnnTopology& topology,
                  const TrajectoryBatch& data, const TargetFn& target = {});

// CSV: epoch,full_batch_loss with epoch starting at 0.
void write_loss_history_csv(std::ostream& os, const std::vector<double>& history);

} // namespace rnnfilter
