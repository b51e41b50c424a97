#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/model.hpp"
#include "rnnfilter/rnn.hpp"
#include "rnnfilter/rng.hpp"

using namespace rnnfilter;

namespace {

// hidden-state layout oracle for the memorization construction
Eigen::VectorXd memorization_target(const MemorizationNet& net, int t,
                                    const Eigen::VectorXd& rho0,
                                    const Eigen::MatrixXd& obs) {
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(net.state_dim());
    expected[0] = t;
    expected.segment(1, rho0.size()) = rho0;
    for (int back = 0; back < t; ++back)
        expected.segment(net.obs_block_offset(back), net.obs_dim) = obs.col(t - 1 - back);
    return expected;
}

double operator_norm(const Eigen::MatrixXd& m) {
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

} // namespace

TEST_CASE("topology wiring per variant") {
    const RnnTopology recursive(RnnVariant::Recursive, {1, 7, 7, 1});
    REQUIRE(recursive.feedback_edges().size() == 1);
    CHECK(recursive.feedback_edges()[0] == FeedbackEdge{1, 2});
    CHECK(recursive.feedback_sources() == std::vector<int>{2});
    CHECK(recursive.feedback_state_dim() == 7);

    const RnnTopology memo(RnnVariant::Memorization, {2, 5, 5});
    REQUIRE(memo.feedback_edges().size() == 1);
    CHECK(memo.feedback_edges()[0] == FeedbackEdge{1, 1});

    const RnnTopology dense(RnnVariant::GeneralDense, {1, 4, 3, 1});
    // (1,1), (1,2), (2,2)
    REQUIRE(dense.feedback_edges().size() == 3);
    CHECK(dense.feedback_sources() == std::vector<int>{1, 2});
    CHECK(dense.feedback_state_dim() == 7);

    CHECK_THROWS_AS(RnnTopology(RnnVariant::Recursive, {1, 1}), DimensionError);
    CHECK_THROWS_AS(RnnTopology(RnnVariant::Recursive, {1, 0, 1}), DimensionError);
}

TEST_CASE("constant network outputs its output bias everywhere") {
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    RnnParams params = zero_params(topo);
    params.biases[1][0] = 4.5;
    Eigen::MatrixXd obs(1, 5);
    obs << -3.0, 0.0, 1.0, 99.0, -7.0;
    const auto run = rnn_unroll(topo, params, obs);
    CHECK((run.outputs.array() == 4.5).all());
}

TEST_CASE("identity wiring computes max(y, 0) componentwise") {
    const RnnTopology topo(RnnVariant::Memorization, {3, 3, 3});
    RnnParams params = zero_params(topo);
    params.feedforward[0].setIdentity();
    params.feedforward[1].setIdentity();
    Eigen::VectorXd y(3);
    y << -1.5, 0.0, 2.25;
    const auto [out, state] = rnn_forward(topo, params, initial_hidden_state(topo, params), y);
    CHECK(out(0) == 0.0);
    CHECK(out(1) == 0.0);
    CHECK(out(2) == 2.25);
    CHECK(state.t == 1);
}

TEST_CASE("memorization construction: worked example") {
    // T=3, d_y=1, rho0 = 0, b=10, observations (0.5, -0.2, 1.1);
    // after t=2 the read-out is [2, 0, -0.2, 0.5, 0]
    const MemorizationNet net =
        construct_memorization_params(3, 1, Eigen::VectorXd::Zero(1), 10.0);
    Eigen::MatrixXd obs(1, 3);
    obs << 0.5, -0.2, 1.1;
    const auto run = rnn_unroll(net.topology, net.params, obs);

    Eigen::VectorXd expected(5);
    expected << 2.0, 0.0, -0.2, 0.5, 0.0;
    CHECK((run.outputs.col(1) - expected).cwiseAbs().maxCoeff() < 1e-12);

    expected << 3.0, 0.0, 1.1, -0.2, 0.5;
    CHECK((run.outputs.col(2) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("memorization with all-zero observations keeps counter and rho0 only") {
    Eigen::VectorXd rho0(2);
    rho0 << 0.7, -0.3;
    const MemorizationNet net = construct_memorization_params(6, 2, rho0, 25.0);
    const Eigen::MatrixXd obs = Eigen::MatrixXd::Zero(2, 6);
    const auto run = rnn_unroll(net.topology, net.params, obs);
    for (int t = 1; t <= 6; ++t) {
        const auto expected = memorization_target(net, t, rho0, obs);
        CHECK((run.outputs.col(t - 1) - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("memorization exactness for random sequences across widths and horizons") {
    RngStream rng(606, 0);
    for (const auto& [T, dy] : {std::pair<int, int>{20, 1}, {20, 2}, {20, 3}, {50, 2}}) {
        Eigen::VectorXd rho0(1);
        rho0 << 0.25;
        const MemorizationNet net = construct_memorization_params(T, dy, rho0, 50.0);
        for (int rep = 0; rep < 5; ++rep) {
            Eigen::MatrixXd obs(dy, T);
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < dy; ++i) obs(i, t) = rng.normal();
            const auto run = rnn_unroll(net.topology, net.params, obs);
            for (int t = 1; t <= T; ++t) {
                const auto expected = memorization_target(net, t, rho0, obs);
                CHECK((run.outputs.col(t - 1) - expected).cwiseAbs().maxCoeff() < 1e-12);
            }
        }
    }
}

TEST_CASE("observations below -b break the stored state, and detectably so") {
    const double b = 10.0;
    const MemorizationNet net =
        construct_memorization_params(3, 1, Eigen::VectorXd::Zero(1), b);
    Eigen::MatrixXd obs(1, 3);
    obs << -2.0 * b, 0.5, 0.5; // first observation leaves the validity region
    const auto run = rnn_unroll(net.topology, net.params, obs);
    // the clamp floors the stored value at 0, so the slot reads -b instead of -2b
    const double stored = run.outputs(2, 0);
    CHECK(stored == doctest::Approx(-b));
    CHECK(std::abs(stored - obs(0, 0)) > b / 2.0);
}

TEST_CASE("unroll of an empty observation sequence is a no-op") {
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    const RnnParams params = init_random_params(topo, 8);
    const auto run = rnn_unroll(topo, params, Eigen::MatrixXd(1, 0));
    CHECK(run.outputs.cols() == 0);
    CHECK(run.final_state.t == 0);
    CHECK(run.final_state.layers == params.init_hidden);
}

TEST_CASE("recursive net with identity-like wiring reproduces a scalar recursion") {
    // s_t = ReLU(0.5 s_{t-1} + y_t), output_t = s_t
    const RnnTopology topo(RnnVariant::Recursive, {1, 1, 1});
    RnnParams params = zero_params(topo);
    params.feedforward[0](0, 0) = 1.0;
    params.feedback[0](0, 0) = 0.5;
    params.feedforward[1](0, 0) = 1.0;

    Eigen::MatrixXd obs(1, 6);
    obs << 1.0, 0.25, 2.0, 0.0, 0.5, 3.0;
    const auto run = rnn_unroll(topo, params, obs);

    double s = 0.0;
    for (int t = 0; t < 6; ++t) {
        s = std::max(0.5 * s + obs(0, t), 0.0);
        CHECK(run.outputs(0, t) == doctest::Approx(s).epsilon(1e-15));
    }
}

TEST_CASE("embedding into the general-dense wiring preserves outputs exactly") {
    const auto model = LinearGaussianModel::scalar(0.98, 2.0, 25.0);
    const auto batch = sample_trajectories(model, 15, 1, 21);

    for (const auto variant : {RnnVariant::Recursive, RnnVariant::Memorization}) {
        const RnnTopology topo(variant, {1, 5, 4, 1});
        RnnParams params = init_random_params(topo, 77);
        for (auto& v : params.init_hidden) v.setConstant(0.1);

        const auto [dense_topo, dense_params] = to_general_dense(topo, params);
        CHECK(dense_topo.variant() == RnnVariant::GeneralDense);

        const auto a = rnn_unroll(topo, params, batch.observations[0]);
        const auto b = rnn_unroll(dense_topo, dense_params, batch.observations[0]);
        CHECK(a.outputs == b.outputs);
    }
}

TEST_CASE("ReLU nonexpansiveness and the feedback-path Lipschitz bound") {
    RngStream rng(13, 0);
    auto random_vec = [&rng](int n) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = rng.normal();
        return v;
    };

    for (int probe = 0; probe < 100; ++probe) {
        const auto a = random_vec(6), b = random_vec(6);
        CHECK((a.cwiseMax(0.0) - b.cwiseMax(0.0)).norm() <= (a - b).norm() + 1e-15);
    }

    // per-step Lipschitz constant in the hidden state is bounded by the
    // product of operator norms along the feedback path
    const RnnTopology topo(RnnVariant::Recursive, {1, 6, 6, 1});
    const RnnParams params = init_random_params(topo, 5);
    const double bound = operator_norm(params.feedforward[1]) *
                         operator_norm(params.feedback[0]);

    const Eigen::VectorXd y = random_vec(1);
    for (int probe = 0; probe < 100; ++probe) {
        HiddenState sa{{random_vec(6).cwiseMax(0.0)}, 0};
        HiddenState sb{{random_vec(6).cwiseMax(0.0)}, 0};
        const auto [oa, na] = rnn_forward(topo, params, sa, y);
        const auto [ob, nb] = rnn_forward(topo, params, sb, y);
        const double dist_in = (sa.layers[0] - sb.layers[0]).norm();
        const double dist_out = (na.layers[0] - nb.layers[0]).norm();
        CHECK(dist_out <= bound * dist_in + 1e-12);
    }
}

TEST_CASE("random init: bounds, damping, zero biases, determinism") {
    const RnnTopology topo(RnnVariant::Recursive, {1, 7, 7, 1});
    const RnnParams a = init_random_params(topo, 2024);
    const RnnParams b = init_random_params(topo, 2024);
    CHECK(flatten_params(topo, a) == flatten_params(topo, b));

    for (std::size_t l = 0; l < a.feedforward.size(); ++l) {
        const auto& w = a.feedforward[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        CHECK(w.cwiseAbs().maxCoeff() <= limit);
    }
    const auto& fb = a.feedback[0];
    CHECK(fb.cwiseAbs().maxCoeff() <=
          0.5 * std::sqrt(6.0 / static_cast<double>(fb.rows() + fb.cols())));
    for (const auto& bias : a.biases) CHECK(bias.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& s0 : a.init_hidden) CHECK(s0.cwiseAbs().maxCoeff() == 0.0);

    const RnnParams undamped = init_random_params(topo, 2024, InitScaleRule::Glorot);
    CHECK(undamped.feedback[0].cwiseAbs().maxCoeff() >
          a.feedback[0].cwiseAbs().maxCoeff());
}

TEST_CASE("freshly initialized recursive net stays finite over 2000 steps") {
    const auto model = LinearGaussianModel::scalar(0.98, 2.0, 25.0);
    const auto batch = sample_trajectories(model, 2000, 1, 6);
    const RnnTopology topo(RnnVariant::Recursive, {1, 7, 7, 1});
    const RnnParams params = init_random_params(topo, 1);
    const auto run = rnn_unroll(topo, params, batch.observations[0]);
    CHECK(run.outputs.allFinite());
}

TEST_CASE("checkpoint round-trips bit-exactly and rejects corrupt streams") {
    const RnnTopology topo(RnnVariant::GeneralDense, {2, 4, 3, 2});
    RnnParams params = init_random_params(topo, 90);
    params.biases[0].setConstant(0.125);
    params.init_hidden[1].setConstant(-0.75); // trained s0 values may be negative

    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    save_checkpoint(ss, topo, params);
    const auto [loaded_topo, loaded_params] = load_checkpoint(ss);
    CHECK(loaded_topo == topo);
    const Eigen::VectorXd original = flatten_params(topo, params);
    const Eigen::VectorXd restored = flatten_params(loaded_topo, loaded_params);
    REQUIRE(original.size() == restored.size());
    for (Eigen::Index i = 0; i < original.size(); ++i) {
        CHECK(std::memcmp(&original[i], &restored[i], sizeof(double)) == 0);
    }

    std::stringstream bad(std::ios::in | std::ios::out | std::ios::binary);
    bad << "NOTACKPT";
    CHECK_THROWS_AS(load_checkpoint(bad), NumericError);
}

TEST_CASE("shape and finiteness violations are reported") {
    const RnnTopology topo(RnnVariant::Recursive, {1, 3, 1});
    RnnParams params = init_random_params(topo, 0);

    Eigen::VectorXd wrong_y(2);
    wrong_y.setZero();
    CHECK_THROWS_AS(rnn_forward(topo, params, initial_hidden_state(topo, params), wrong_y),
                    DimensionError);

    HiddenState bad_state{{Eigen::VectorXd::Zero(5)}, 0};
    CHECK_THROWS_AS(rnn_forward(topo, params, bad_state, Eigen::VectorXd::Zero(1)),
                    DimensionError);

    params.feedforward[0](0, 0) = std::numeric_limits<double>::infinity();
    try {
        rnn_forward(topo, params, HiddenState{{Eigen::VectorXd::Zero(3)}, 0},
                    Eigen::VectorXd::Constant(1, 1.0));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("stack/unstack hidden state round-trips") {
    const RnnTopology topo(RnnVariant::GeneralDense, {1, 3, 2, 1});
    HiddenState state{{Eigen::VectorXd::LinSpaced(3, 0.0, 1.0),
                       Eigen::VectorXd::LinSpaced(2, 2.0, 3.0)},
                      4};
    const Eigen::VectorXd stacked = stack_hidden(state);
    REQUIRE(stacked.size() == 5);
    const HiddenState back = unstack_hidden(topo, stacked, 4);
    CHECK(back.layers == state.layers);
    CHECK(back.t == 4);
    CHECK_THROWS_AS(unstack_hidden(topo, Eigen::VectorXd::Zero(4)), DimensionError);
}
