#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/model.hpp"
#include "rnnfilter/parallel.hpp"
#include "rnnfilter/rng.hpp"
#include "rnnfilter/train.hpp"

using namespace rnnfilter;

namespace {

// Independently coded reference for the empirical loss on the Recursive L=3
// shape: plain index loops, no shared evaluation path with the library.
double reference_loss_recursive3(const RnnTopology& topo, const RnnParams& p,
                                 const TrajectoryBatch& batch) {
    REQUIRE(topo.variant() == RnnVariant::Recursive);
    REQUIRE(topo.num_layers() == 3);
    const int w1 = topo.width(1), w2 = topo.width(2), dout = topo.output_dim();
    const int T = batch.horizon();
    double total = 0.0;
    for (int n = 0; n < batch.count(); ++n) {
        std::vector<double> s2(static_cast<std::size_t>(w2));
        for (int i = 0; i < w2; ++i) s2[i] = p.init_hidden[0][i];
        for (int t = 1; t <= T; ++t) {
            const double y = batch.observations[n](0, t - 1);
            std::vector<double> s1(static_cast<std::size_t>(w1));
            for (int i = 0; i < w1; ++i) {
                double pre = p.feedforward[0](i, 0) * y + p.biases[0][i];
                for (int j = 0; j < w2; ++j) pre += p.feedback[0](i, j) * s2[j];
                s1[i] = pre > 0.0 ? pre : 0.0;
            }
            std::vector<double> s2_next(static_cast<std::size_t>(w2));
            for (int i = 0; i < w2; ++i) {
                double pre = p.biases[1][i];
                for (int j = 0; j < w1; ++j) pre += p.feedforward[1](i, j) * s1[j];
                s2_next[i] = pre > 0.0 ? pre : 0.0;
            }
            s2 = s2_next;
            for (int i = 0; i < dout; ++i) {
                double out = p.biases[2][i];
                for (int j = 0; j < w2; ++j) out += p.feedforward[2](i, j) * s2[j];
                const double diff = out - batch.states[n](i, t);
                total += diff * diff;
            }
        }
    }
    return total / (static_cast<double>(batch.count()) * T);
}

// constant trajectories: X_t = c exactly, arbitrary observations
TrajectoryBatch constant_batch(double c, int T, int N) {
    LinearGaussianModel m = LinearGaussianModel::scalar(1.0, 1.0, 0.0, c);
    m.q_cov.setZero();
    return sample_trajectories(m, T, N, 1);
}

TrainConfig small_config(int T, int N) {
    TrainConfig cfg;
    cfg.horizon_T_train = T;
    cfg.count_N_train = N;
    cfg.epochs = 3;
    cfg.minibatch_size = std::min(4, N);
    cfg.learning_rate = 1e-3;
    cfg.seed = 11;
    return cfg;
}

} // namespace

TEST_CASE("loss is zero when the network already matches the targets") {
    const auto batch = constant_batch(2.5, 4, 3);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    RnnParams params = zero_params(topo);
    params.biases[1][0] = 2.5; // constant network equal to the constant target
    CHECK(empirical_loss(topo, params, batch) == 0.0);
    const auto g = grad_bptt(topo, params, batch);
    CHECK(flatten_params(topo, g.grad).cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.loss == 0.0);
}

TEST_CASE("constant-zero network on constant targets c has loss c^2") {
    const auto batch = constant_batch(1.5, 5, 2);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    const RnnParams params = zero_params(topo);
    CHECK(empirical_loss(topo, params, batch) == doctest::Approx(2.25).epsilon(1e-15));
}

TEST_CASE("loss matches the independent double-loop reference to 1e-12") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.5, 4.0);
    const auto batch = sample_trajectories(model, 7, 4, 33);
    const RnnTopology topo(RnnVariant::Recursive, {1, 4, 3, 1});
    RnnParams params = init_random_params(topo, 91);
    for (auto& b : params.biases) b.setConstant(0.05);
    params.init_hidden[0].setConstant(0.2);

    const double lib = empirical_loss(topo, params, batch);
    const double ref = reference_loss_recursive3(topo, params, batch);
    CHECK(lib == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("BPTT matches central finite differences on a width-4 instance") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 5, 2, 14);
    const RnnTopology topo(RnnVariant::Recursive, {1, 4, 4, 1});
    RnnParams params = init_random_params(topo, 3);
    for (auto& b : params.biases) b.setConstant(0.07); // keep clear of kinks
    params.init_hidden[0].setConstant(0.1);

    const auto bptt = grad_bptt(topo, params, batch);
    const auto fd = finite_diff_grad(topo, params, batch, {}, 1e-5);
    const Eigen::VectorXd gb = flatten_params(topo, bptt.grad);
    const Eigen::VectorXd gf = flatten_params(topo, fd.grad);
    REQUIRE(gb.size() == gf.size());
    for (Eigen::Index i = 0; i < gb.size(); ++i) {
        CHECK(std::abs(gb[i] - gf[i]) / std::max(1.0, std::abs(gf[i])) <= 1e-5);
    }
    CHECK(bptt.loss == doctest::Approx(fd.loss).epsilon(1e-15));
}

TEST_CASE("BPTT matches finite differences on every feedback variant") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 4, 2, 27);

    auto check_variant = [&](RnnVariant variant, std::vector<int> widths) {
        const RnnTopology topo(variant, std::move(widths));
        RnnParams params = init_random_params(topo, 61);
        for (auto& b : params.biases) b.setConstant(0.06);
        for (auto& v : params.init_hidden) v.setConstant(0.15);

        const Eigen::VectorXd gb =
            flatten_params(topo, grad_bptt(topo, params, batch).grad);
        const Eigen::VectorXd gf =
            flatten_params(topo, finite_diff_grad(topo, params, batch, {}, 1e-5).grad);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < gb.size(); ++i) {
            worst = std::max(worst,
                             std::abs(gb[i] - gf[i]) / std::max(1.0, std::abs(gf[i])));
        }
        CAPTURE(static_cast<int>(variant));
        CHECK(worst <= 1e-5);
    };

    check_variant(RnnVariant::Recursive, {1, 3, 3, 1});
    check_variant(RnnVariant::Memorization, {1, 4, 1});
    check_variant(RnnVariant::GeneralDense, {1, 3, 2, 1});
}

TEST_CASE("non-identity target functions feed the loss and gradients") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 4, 2, 55);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 2}); // 2-dim output
    RnnParams params = init_random_params(topo, 8);
    for (auto& b : params.biases) b.setConstant(0.05);

    const TargetFn target = [](const Eigen::VectorXd& x) {
        Eigen::VectorXd z(2);
        z << x[0], 0.5 * x[0];
        return z;
    };

    // reference: unroll and accumulate the squared error directly
    double expected = 0.0;
    for (int n = 0; n < 2; ++n) {
        const auto run = rnn_unroll(topo, params, batch.observations[n]);
        for (int t = 1; t <= 4; ++t) {
            expected += (run.outputs.col(t - 1) - target(batch.states[n].col(t)))
                            .squaredNorm();
        }
    }
    expected /= 2.0 * 4.0;
    CHECK(empirical_loss(topo, params, batch, target) ==
          doctest::Approx(expected).epsilon(1e-14));

    const Eigen::VectorXd gb =
        flatten_params(topo, grad_bptt(topo, params, batch, target).grad);
    const Eigen::VectorXd gf =
        flatten_params(topo, finite_diff_grad(topo, params, batch, target, 1e-5).grad);
    for (Eigen::Index i = 0; i < gb.size(); ++i) {
        CHECK(std::abs(gb[i] - gf[i]) / std::max(1.0, std::abs(gf[i])) <= 1e-5);
    }

    // dimension mismatch between target and network output is rejected
    CHECK_THROWS_AS(empirical_loss(topo, params, batch), DimensionError);
}

TEST_CASE("dead ReLU layer gets exactly zero gradients") {
    const auto model = LinearGaussianModel::scalar(0.5, 1.0, 1.0);
    const auto batch = sample_trajectories(model, 5, 2, 8);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 3, 1});
    RnnParams params = init_random_params(topo, 4);
    params.biases[0].setConstant(-100.0); // layer 1 never activates

    const auto g = grad_bptt(topo, params, batch);
    CHECK(g.grad.feedforward[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.grad.biases[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.grad.feedback[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.grad.init_hidden[0].cwiseAbs().maxCoeff() == 0.0);
    // the output bias still learns the mean
    CHECK(g.grad.biases[2].cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("finite differences are exact for a loss quadratic in the parameter") {
    // constant network: loss(b) = mean (b - c)^2, derivative 2 (b - c)
    const auto batch = constant_batch(1.5, 5, 2);
    const RnnTopology topo(RnnVariant::Recursive, {1, 2, 1});
    RnnParams params = zero_params(topo);
    params.biases[1][0] = 0.25;

    const auto fd = finite_diff_grad(topo, params, batch, {}, 1e-3);
    const double analytic = 2.0 * (0.25 - 1.5);
    // central differences are exact for quadratics up to roundoff
    CHECK(fd.grad.biases[1][0] == doctest::Approx(analytic).epsilon(1e-9));
}

TEST_CASE("oversized h on a kinked instance visibly disagrees with BPTT") {
    // single ReLU with pre-activation 0.05: stepping h = 1 crosses the kink
    TrajectoryBatch batch;
    batch.states.push_back((Eigen::MatrixXd(1, 2) << 0.0, 1.0).finished());
    batch.observations.push_back(Eigen::MatrixXd::Constant(1, 1, 1.0));

    const RnnTopology topo(RnnVariant::Recursive, {1, 1, 1});
    RnnParams params = zero_params(topo);
    params.feedforward[0](0, 0) = 0.05; // pre-activation = 0.05 * y = 0.05
    params.feedforward[1](0, 0) = 1.0;

    const auto bptt = grad_bptt(topo, params, batch);
    const auto fd_small = finite_diff_grad(topo, params, batch, {}, 1e-6);
    const auto fd_huge = finite_diff_grad(topo, params, batch, {}, 1.0);

    const double exact = bptt.grad.feedforward[0](0, 0);
    const double small = fd_small.grad.feedforward[0](0, 0);
    const double huge = fd_huge.grad.feedforward[0](0, 0);
    CHECK(std::abs(small - exact) / std::max(1.0, std::abs(exact)) < 1e-4);
    CHECK(std::abs(huge - exact) / std::max(1.0, std::abs(exact)) > 0.1);
}

TEST_CASE("zero learning rate leaves parameters untouched with a flat history") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 5, 8, 70);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    TrainConfig cfg = small_config(5, 8);
    cfg.learning_rate = 0.0;
    cfg.epochs = 4;

    const auto result = train(cfg, topo, batch);
    const RnnParams fresh = init_random_params(topo, derive_seed(cfg.seed, "init"));
    CHECK(flatten_params(topo, result.params) == flatten_params(topo, fresh));
    REQUIRE(result.loss_history.size() == 5);
    for (double loss : result.loss_history) CHECK(loss == result.loss_history[0]);
}

TEST_CASE("training is deterministic given the seed") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 5, 8, 70);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    const TrainConfig cfg = small_config(5, 8);

    const auto a = train(cfg, topo, batch);
    const auto b = train(cfg, topo, batch);
    CHECK(a.loss_history == b.loss_history);
    CHECK(flatten_params(topo, a.params) == flatten_params(topo, b.params));
}

TEST_CASE("gradients and training are thread-count invariant") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 6, 10, 41);
    const RnnTopology topo(RnnVariant::Recursive, {1, 4, 4, 1});
    const RnnParams params = init_random_params(topo, 15);

    set_max_threads(1);
    const Eigen::VectorXd g1 = flatten_params(topo, grad_bptt(topo, params, batch).grad);
    const auto t1 = train(small_config(6, 10), topo, batch);
    set_max_threads(2);
    const Eigen::VectorXd g2 = flatten_params(topo, grad_bptt(topo, params, batch).grad);
    const auto t2 = train(small_config(6, 10), topo, batch);
    set_max_threads(0);

    CHECK(g1 == g2);
    CHECK(t1.loss_history == t2.loss_history);
    CHECK(flatten_params(topo, t1.params) == flatten_params(topo, t2.params));
}

TEST_CASE("expected minibatch gradient equals the full-batch gradient") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 4, 8, 23);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    RnnParams params = init_random_params(topo, 12);
    for (auto& b : params.biases) b.setConstant(0.05);

    const Eigen::VectorXd full = flatten_params(topo, grad_bptt(topo, params, batch).grad);

    RngStream rng(500, 0);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(full.size());
    std::vector<int> pool(8);
    std::iota(pool.begin(), pool.end(), 0);
    const int draws = 1000, subset = 6;
    for (int d = 0; d < draws; ++d) {
        // partial Fisher-Yates: uniform subset without replacement
        for (int i = 0; i < subset; ++i) {
            const int j = i + static_cast<int>(rng.uniform_below(8 - i));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        }
        const std::span<const int> chunk(pool.data(), subset);
        avg += flatten_params(topo, grad_bptt_subset(topo, params, batch, chunk).grad);
    }
    avg /= draws;
    CHECK((avg - full).norm() <= 0.01 * full.norm());
}

TEST_CASE("full-batch SGD with a small step decreases the loss") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 5, 6, 62);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    TrainConfig cfg = small_config(5, 6);
    cfg.minibatch_size = 6; // full batch
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.learning_rate = 1e-4;
    cfg.epochs = 10;

    const auto result = train(cfg, topo, batch);
    int non_decreasing = 0;
    for (std::size_t e = 1; e < result.loss_history.size(); ++e) {
        if (result.loss_history[e] >= result.loss_history[e - 1]) ++non_decreasing;
    }
    CHECK(non_decreasing <= 1);
    CHECK(result.loss_history.back() < result.loss_history.front());
}

TEST_CASE("benchmark-model training beats the constant-predictor baseline") {
    const auto model = LinearGaussianModel::scalar(0.98, 2.0, 25.0);
    const auto batch = sample_trajectories(model, 20, 5000, 321);
    const RnnTopology topo(RnnVariant::Recursive, {1, 7, 7, 1});

    TrainConfig cfg;
    cfg.horizon_T_train = 20;
    cfg.count_N_train = 5000;
    cfg.epochs = 20;
    cfg.minibatch_size = 256;
    cfg.learning_rate = 1e-3;
    cfg.seed = 2024;

    // best constant predictor (zero) pays the full signal variance
    double baseline = 0.0;
    for (const auto& traj : batch.states)
        baseline += traj.rightCols(20).array().square().sum();
    baseline /= 5000.0 * 20.0;
    CHECK(baseline > 20.0); // sanity: near the stationary variance 25

    const auto result = train(cfg, topo, batch);
    CHECK(result.loss_history.back() < 0.2 * baseline);
}

TEST_CASE("train_s0 controls whether the initial hidden state moves") {
    const auto model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    const auto batch = sample_trajectories(model, 5, 8, 19);
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});

    TrainConfig cfg = small_config(5, 8);
    cfg.train_s0 = false;
    const auto frozen = train(cfg, topo, batch);
    CHECK(frozen.params.init_hidden[0].cwiseAbs().maxCoeff() == 0.0);

    cfg.train_s0 = true;
    const auto trained = train(cfg, topo, batch);
    CHECK(trained.params.init_hidden[0].cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("diverging training raises TrainingDiverged with the epoch index") {
    const auto model = LinearGaussianModel::scalar(0.98, 2.0, 25.0);
    const auto batch = sample_trajectories(model, 10, 8, 3);
    const RnnTopology topo(RnnVariant::Recursive, {1, 4, 1});
    TrainConfig cfg = small_config(10, 8);
    cfg.count_N_train = 8;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.learning_rate = 1e6;
    cfg.grad_clip_norm.reset();
    cfg.epochs = 50;

    try {
        train(cfg, topo, batch);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.epoch >= 1);
        CHECK(!e.loss_history.empty());
    }
}

TEST_CASE("config validation names the offending field") {
    TrainConfig cfg = small_config(5, 4);
    cfg.minibatch_size = 10; // exceeds count_N_train
    try {
        cfg.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field == "train.minibatch_size");
    }
}
