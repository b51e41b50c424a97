#include "rnnfilter/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/parallel.hpp"
#include "rnnfilter/rng.hpp"
#include "csv_util.hpp"

namespace rnnfilter {

void TrainConfig::validate() const {
    if (horizon_T_train < 1) throw ConfigError("horizon_T_train must be positive", "train.horizon_T");
    if (count_N_train < 1) throw ConfigError("count_N_train must be positive", "train.count_N");
    if (epochs < 1) throw ConfigError("epochs must be positive", "train.epochs");
    if (minibatch_size < 1) throw ConfigError("minibatch_size must be positive", "train.minibatch_size");
    if (minibatch_size > count_N_train)
        throw ConfigError("minibatch_size must not exceed count_N_train", "train.minibatch_size");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be a finite nonnegative real", "train.learning_rate");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0))
        throw ConfigError("grad_clip_norm must be positive when set", "train.grad_clip_norm");
}

namespace {

Eigen::VectorXd target_of_state(const TargetFn& target, const Eigen::VectorXd& state) {
    return target ? target(state) : state;
}

void check_batch_compatibility(const RnnTopology& topology, const TrajectoryBatch& batch) {
    if (batch.count() < 1 || batch.horizon() < 1)
        throw DimensionError("training batch must be non-empty");
    if (batch.obs_dim() != topology.input_dim())
        throw DimensionError("batch observation dimension does not match topology input");
}

// Squared-error sum over one trajectory; not yet normalized by 1/(N T).
double trajectory_loss(const RnnTopology& topology, const RnnParams& params,
                       const Eigen::MatrixXd& states, const Eigen::MatrixXd& obs,
                       const TargetFn& target, int n) {
    double sum = 0.0;
    std::vector<Eigen::VectorXd> prev = params.init_hidden;
    for (Eigen::Index t = 0; t < obs.cols(); ++t) {
        const StepTrace trace = rnn_forward_traced(topology, params, prev, obs.col(t));
        const Eigen::VectorXd z = target_of_state(target, states.col(t + 1));
        if (z.size() != trace.output.size())
            throw DimensionError("target dimension does not match network output");
        const double term = (trace.output - z).squaredNorm();
        if (!std::isfinite(term))
            throw NumericError("empirical_loss: non-finite term at trajectory n=" +
                               std::to_string(n) + ", t=" + std::to_string(t + 1));
        sum += term;
        prev.clear();
        for (int k : topology.feedback_sources())
            prev.push_back(trace.act[static_cast<std::size_t>(k)]);
    }
    return sum;
}

// Unnormalized gradient and loss of one trajectory, accumulated into `grad`.
double trajectory_grad(const RnnTopology& topology, const RnnParams& params,
                       const Eigen::MatrixXd& states, const Eigen::MatrixXd& obs,
                       const TargetFn& target, int n, RnnParams& grad) {
    const int L = topology.num_layers();
    const auto T = obs.cols();
    const auto& sources = topology.feedback_sources();
    const auto& edges = topology.feedback_edges();

    // forward pass, keeping the full tape
    std::vector<StepTrace> tape;
    tape.reserve(static_cast<std::size_t>(T));
    std::vector<Eigen::VectorXd> prev = params.init_hidden;
    double loss_sum = 0.0;
    std::vector<Eigen::VectorXd> targets(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t) {
        tape.push_back(rnn_forward_traced(topology, params, prev, obs.col(t)));
        const auto& trace = tape.back();
        Eigen::VectorXd z = target_of_state(target, states.col(t + 1));
        if (z.size() != trace.output.size())
            throw DimensionError("target dimension does not match network output");
        const double term = (trace.output - z).squaredNorm();
        if (!std::isfinite(term))
            throw NumericError("grad_bptt: non-finite loss term at trajectory n=" +
                               std::to_string(n) + ", t=" + std::to_string(t + 1));
        loss_sum += term;
        targets[static_cast<std::size_t>(t)] = std::move(z);
        prev.clear();
        for (int k : sources) prev.push_back(trace.act[static_cast<std::size_t>(k)]);
    }

    // reverse pass; carry[s] holds dL/d act_{t}^{(source s)} contributions
    // arriving through feedback from step t+1
    std::vector<Eigen::VectorXd> carry(sources.size());
    for (std::size_t s = 0; s < sources.size(); ++s)
        carry[s] = Eigen::VectorXd::Zero(topology.width(sources[s]));
    std::vector<Eigen::VectorXd> h(static_cast<std::size_t>(L)); // masked deltas per layer

    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const auto& trace = tape[static_cast<std::size_t>(t)];
        const auto prev_act = [&](int layer) -> const Eigen::VectorXd& {
            const int slot = topology.source_slot(layer);
            if (t == 0) return params.init_hidden[static_cast<std::size_t>(slot)];
            return tape[static_cast<std::size_t>(t - 1)].act[static_cast<std::size_t>(layer)];
        };

        const Eigen::VectorXd g_out =
            2.0 * (trace.output - targets[static_cast<std::size_t>(t)]);
        grad.feedforward[static_cast<std::size_t>(L - 1)] +=
            g_out * trace.act[static_cast<std::size_t>(L - 1)].transpose();
        grad.biases[static_cast<std::size_t>(L - 1)] += g_out;

        std::vector<Eigen::VectorXd> next_carry(sources.size());
        for (std::size_t s = 0; s < sources.size(); ++s)
            next_carry[s] = Eigen::VectorXd::Zero(topology.width(sources[s]));

        for (int l = L - 1; l >= 1; --l) {
            Eigen::VectorXd delta =
                l == L - 1
                    ? Eigen::VectorXd(params.feedforward[static_cast<std::size_t>(L - 1)]
                                          .transpose() *
                                      g_out)
                    : Eigen::VectorXd(params.feedforward[static_cast<std::size_t>(l)]
                                          .transpose() *
                                      h[static_cast<std::size_t>(l + 1)]);
            const int slot = topology.source_slot(l);
            if (slot >= 0) delta += carry[static_cast<std::size_t>(slot)];

            // ReLU subgradient: strictly positive pre-activations pass, the
            // kink at zero contributes nothing
            const auto& pre = trace.pre[static_cast<std::size_t>(l - 1)];
            h[static_cast<std::size_t>(l)] =
                (pre.array() > 0.0).select(delta.array(), 0.0).matrix();

            const auto& hl = h[static_cast<std::size_t>(l)];
            grad.feedforward[static_cast<std::size_t>(l - 1)] +=
                hl * trace.act[static_cast<std::size_t>(l - 1)].transpose();
            grad.biases[static_cast<std::size_t>(l - 1)] += hl;

            for (std::size_t e = 0; e < edges.size(); ++e) {
                if (edges[e].to_layer != l) continue;
                const int k = edges[e].from_layer;
                grad.feedback[e] += hl * prev_act(k).transpose();
                next_carry[static_cast<std::size_t>(topology.source_slot(k))] +=
                    params.feedback[e].transpose() * hl;
            }
        }
        carry = std::move(next_carry);
    }

    // what trickles past t = 1 is the gradient with respect to s0
    for (std::size_t s = 0; s < sources.size(); ++s) grad.init_hidden[s] += carry[s];
    return loss_sum;
}

void add_params(RnnParams& into, const RnnParams& other) {
    for (std::size_t i = 0; i < into.feedforward.size(); ++i)
        into.feedforward[i] += other.feedforward[i];
    for (std::size_t i = 0; i < into.feedback.size(); ++i)
        into.feedback[i] += other.feedback[i];
    for (std::size_t i = 0; i < into.biases.size(); ++i) into.biases[i] += other.biases[i];
    for (std::size_t i = 0; i < into.init_hidden.size(); ++i)
        into.init_hidden[i] += other.init_hidden[i];
}

void scale_params(RnnParams& p, double factor) {
    for (auto& w : p.feedforward) w *= factor;
    for (auto& w : p.feedback) w *= factor;
    for (auto& b : p.biases) b *= factor;
    for (auto& v : p.init_hidden) v *= factor;
}

std::vector<int> all_indices(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

} // namespace

double empirical_loss_subset(const RnnTopology& topology, const RnnParams& params,
                             const TrajectoryBatch& batch, std::span<const int> indices,
                             const TargetFn& target) {
    validate_params(topology, params);
    check_batch_compatibility(topology, batch);
    if (indices.empty()) throw DimensionError("empirical_loss_subset: empty index set");

    std::vector<double> partial(indices.size(), 0.0);
    parallel_for(static_cast<int>(indices.size()), [&](int i) {
        const int n = indices[static_cast<std::size_t>(i)];
        partial[static_cast<std::size_t>(i)] =
            trajectory_loss(topology, params, batch.states[static_cast<std::size_t>(n)],
                            batch.observations[static_cast<std::size_t>(n)], target, n);
    });
    tree_reduce_in_place(partial, [](double& a, const double& b) { a += b; });
    return partial[0] / (static_cast<double>(indices.size()) *
                         static_cast<double>(batch.horizon()));
}

double empirical_loss(const RnnTopology& topology, const RnnParams& params,
                      const TrajectoryBatch& batch, const TargetFn& target) {
    const auto idx = all_indices(batch.count());
    return empirical_loss_subset(topology, params, batch, idx, target);
}

GradientBundle grad_bptt_subset(const RnnTopology& topology, const RnnParams& params,
                                const TrajectoryBatch& batch, std::span<const int> indices,
                                const TargetFn& target) {
    validate_params(topology, params);
    check_batch_compatibility(topology, batch);
    if (indices.empty()) throw DimensionError("grad_bptt_subset: empty index set");

    struct Slot {
        RnnParams grad;
        double loss = 0.0;
    };
    std::vector<Slot> slots(indices.size());
    parallel_for(static_cast<int>(indices.size()), [&](int i) {
        const int n = indices[static_cast<std::size_t>(i)];
        auto& slot = slots[static_cast<std::size_t>(i)];
        slot.grad = zero_params(topology);
        slot.loss = trajectory_grad(topology, params,
                                    batch.states[static_cast<std::size_t>(n)],
                                    batch.observations[static_cast<std::size_t>(n)], target,
                                    n, slot.grad);
    });
    tree_reduce_in_place(slots, [](Slot& a, const Slot& b) {
        add_params(a.grad, b.grad);
        a.loss += b.loss;
    });

    const double norm = 1.0 / (static_cast<double>(indices.size()) *
                               static_cast<double>(batch.horizon()));
    GradientBundle bundle{std::move(slots[0].grad), slots[0].loss * norm};
    scale_params(bundle.grad, norm);
    if (!flatten_params(topology, bundle.grad).allFinite())
        throw NumericError("grad_bptt: non-finite gradient");
    return bundle;
}

GradientBundle grad_bptt(const RnnTopology& topology, const RnnParams& params,
                         const TrajectoryBatch& batch, const TargetFn& target) {
    const auto idx = all_indices(batch.count());
    return grad_bptt_subset(topology, params, batch, idx, target);
}

GradientBundle finite_diff_grad(const RnnTopology& topology, const RnnParams& params,
                                const TrajectoryBatch& batch, const TargetFn& target,
                                double h) {
    if (!(h > 0.0)) throw DimensionError("finite_diff_grad: h must be positive");
    const Eigen::VectorXd flat = flatten_params(topology, params);
    Eigen::VectorXd fd(flat.size());
    RnnParams probe = zero_params(topology);
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
        Eigen::VectorXd shifted = flat;
        shifted[i] = flat[i] + h;
        unflatten_params(topology, shifted, probe);
        const double up = empirical_loss(topology, probe, batch, target);
        shifted[i] = flat[i] - h;
        unflatten_params(topology, shifted, probe);
        const double down = empirical_loss(topology, probe, batch, target);
        fd[i] = (up - down) / (2.0 * h);
    }
    GradientBundle bundle{zero_params(topology), empirical_loss(topology, params, batch, target)};
    unflatten_params(topology, fd, bundle.grad);
    return bundle;
}

TrainResult train(const TrainConfig& config, const RnnTopology& topology,
                  const TrajectoryBatch& data, const TargetFn& target) {
    config.validate();
    check_batch_compatibility(topology, data);
    if (data.count() != config.count_N_train)
        throw ConfigError("training data count does not match count_N_train",
                          "train.count_N");
    if (data.horizon() != config.horizon_T_train)
        throw ConfigError("training data horizon does not match horizon_T_train",
                          "train.horizon_T");

    RnnParams params = init_random_params(topology, derive_seed(config.seed, "init"));
    RngStream shuffle_rng(derive_seed(config.seed, "minibatch-order"), 0);

    const Eigen::Index dim = param_count(topology);
    // segment of the flat vector occupied by init_hidden (kept frozen unless
    // train_s0); it is the trailing block by flattening order
    const Eigen::Index s0_dim = topology.feedback_state_dim();
    const Eigen::Index s0_begin = dim - s0_dim;

    Eigen::VectorXd flat = flatten_params(topology, params);
    Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd adam_v = Eigen::VectorXd::Zero(dim);
    long long adam_steps = 0;

    std::vector<double> history;
    history.push_back(empirical_loss(topology, params, data, target));
    const double initial_loss = history[0];

    std::vector<int> order = all_indices(data.count());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        // Fisher-Yates on the trajectory order
        for (int i = data.count() - 1; i > 0; --i) {
            const auto j = static_cast<int>(
                shuffle_rng.uniform_below(static_cast<std::uint32_t>(i + 1)));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        for (int start = 0; start + config.minibatch_size <= data.count();
             start += config.minibatch_size) {
            const std::span<const int> chunk(order.data() + start,
                                             static_cast<std::size_t>(config.minibatch_size));
            GradientBundle bundle;
            try {
                bundle = grad_bptt_subset(topology, params, data, chunk, target);
            } catch (const NumericError& e) {
                // a blow-up mid-epoch is a divergence, reported as such
                throw TrainingDiverged(std::string("training diverged at epoch ") +
                                           std::to_string(epoch) + ": " + e.what(),
                                       epoch, history);
            }
            Eigen::VectorXd g = flatten_params(topology, bundle.grad);
            if (!config.train_s0 && s0_dim > 0) g.segment(s0_begin, s0_dim).setZero();

            if (config.grad_clip_norm) {
                const double norm = g.norm();
                if (norm > *config.grad_clip_norm) g *= *config.grad_clip_norm / norm;
            }

            if (config.optimizer == OptimizerKind::Sgd) {
                flat -= config.learning_rate * g;
            } else {
                ++adam_steps;
                const auto& a = config.adam;
                adam_m = a.beta1 * adam_m + (1.0 - a.beta1) * g;
                adam_v = a.beta2 * adam_v + (1.0 - a.beta2) * g.cwiseProduct(g);
                const double m_corr = 1.0 - std::pow(a.beta1, static_cast<double>(adam_steps));
                const double v_corr = 1.0 - std::pow(a.beta2, static_cast<double>(adam_steps));
                flat -= (config.learning_rate * (adam_m / m_corr).array() /
                         ((adam_v / v_corr).array().sqrt() + a.eps))
                            .matrix();
            }
            unflatten_params(topology, flat, params);
        }

        double loss = std::numeric_limits<double>::quiet_NaN();
        try {
            loss = empirical_loss(topology, params, data, target);
        } catch (const NumericError&) {
        }
        if (!std::isfinite(loss) || loss > 1e6 * initial_loss) {
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch),
                                   epoch, history);
        }
        history.push_back(loss);
    }
    return TrainResult{std::move(params), std::move(history)};
}

void write_loss_history_csv(std::ostream& os, const std::vector<double>& history) {
    os << "epoch,full_batch_loss\n";
    for (std::size_t e = 0; e < history.size(); ++e) {
        os << e << ',' << detail::format_double(history[e]) << "\n";
    }
}

} // namespace rnnfilter
