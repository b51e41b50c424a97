#include "rnnfilter/rnn.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace rnnfilter {

RnnTopology::RnnTopology(RnnVariant variant, std::vector<int> layer_widths)
    : variant_(variant), widths_(std::move(layer_widths)) {
    const int L = num_layers();
    if (L < 2) throw DimensionError("topology needs at least 2 layers (one hidden)");
    for (int w : widths_) {
        if (w < 1) throw DimensionError("layer widths must be >= 1");
    }
    switch (variant_) {
        case RnnVariant::GeneralDense:
            for (int l = 1; l <= L - 1; ++l)
                for (int k = l; k <= L - 1; ++k) edges_.push_back({l, k});
            break;
        case RnnVariant::Memorization:
            edges_.push_back({1, 1});
            break;
        case RnnVariant::Recursive:
            edges_.push_back({1, L - 1});
            break;
    }
    for (const auto& e : edges_) {
        if (source_slot(e.from_layer) < 0) sources_.push_back(e.from_layer);
    }
    std::sort(sources_.begin(), sources_.end());
    for (int k : sources_) feedback_state_dim_ += width(k);
}

int RnnTopology::source_slot(int layer) const {
    for (std::size_t i = 0; i < sources_.size(); ++i) {
        if (sources_[i] == layer) return static_cast<int>(i);
    }
    return -1;
}

void validate_params(const RnnTopology& topology, const RnnParams& params) {
    const int L = topology.num_layers();
    if (params.feedforward.size() != static_cast<std::size_t>(L) ||
        params.biases.size() != static_cast<std::size_t>(L))
        throw DimensionError("params: expected one feedforward matrix and bias per layer");
    if (params.feedback.size() != topology.feedback_edges().size())
        throw DimensionError("params: feedback count mismatch with topology");
    if (params.init_hidden.size() != topology.feedback_sources().size())
        throw DimensionError("params: init_hidden count mismatch with topology");

    for (int l = 1; l <= L; ++l) {
        const auto& w = params.feedforward[static_cast<std::size_t>(l - 1)];
        if (w.rows() != topology.width(l) || w.cols() != topology.width(l - 1))
            throw DimensionError("params: feedforward shape mismatch at layer " +
                                 std::to_string(l));
        if (params.biases[static_cast<std::size_t>(l - 1)].size() != topology.width(l))
            throw DimensionError("params: bias shape mismatch at layer " + std::to_string(l));
        if (!w.allFinite() || !params.biases[static_cast<std::size_t>(l - 1)].allFinite())
            throw NumericError("params: non-finite entries at layer " + std::to_string(l));
    }
    for (std::size_t e = 0; e < params.feedback.size(); ++e) {
        const auto edge = topology.feedback_edges()[e];
        const auto& w = params.feedback[e];
        if (w.rows() != topology.width(edge.to_layer) ||
            w.cols() != topology.width(edge.from_layer))
            throw DimensionError("params: feedback shape mismatch for W(" +
                                 std::to_string(edge.to_layer) + "," +
                                 std::to_string(edge.from_layer) + ")");
        if (!w.allFinite()) throw NumericError("params: non-finite feedback entries");
    }
    for (std::size_t s = 0; s < params.init_hidden.size(); ++s) {
        const int layer = topology.feedback_sources()[s];
        if (params.init_hidden[s].size() != topology.width(layer))
            throw DimensionError("params: init_hidden shape mismatch");
        if (!params.init_hidden[s].allFinite())
            throw NumericError("params: non-finite init_hidden entries");
    }
}

RnnParams zero_params(const RnnTopology& topology) {
    RnnParams p;
    const int L = topology.num_layers();
    for (int l = 1; l <= L; ++l) {
        p.feedforward.push_back(
            Eigen::MatrixXd::Zero(topology.width(l), topology.width(l - 1)));
        p.biases.push_back(Eigen::VectorXd::Zero(topology.width(l)));
    }
    for (const auto& e : topology.feedback_edges()) {
        p.feedback.push_back(
            Eigen::MatrixXd::Zero(topology.width(e.to_layer), topology.width(e.from_layer)));
    }
    for (int k : topology.feedback_sources()) {
        p.init_hidden.push_back(Eigen::VectorXd::Zero(topology.width(k)));
    }
    return p;
}

HiddenState initial_hidden_state(const RnnTopology& topology, const RnnParams& params) {
    validate_params(topology, params);
    return HiddenState{params.init_hidden, 0};
}

Eigen::VectorXd stack_hidden(const HiddenState& state) {
    Eigen::Index total = 0;
    for (const auto& v : state.layers) total += v.size();
    Eigen::VectorXd stacked(total);
    Eigen::Index at = 0;
    for (const auto& v : state.layers) {
        stacked.segment(at, v.size()) = v;
        at += v.size();
    }
    return stacked;
}

HiddenState unstack_hidden(const RnnTopology& topology, const Eigen::VectorXd& stacked,
                           int t) {
    if (stacked.size() != topology.feedback_state_dim())
        throw DimensionError("unstack_hidden: stacked dimension mismatch");
    HiddenState state;
    state.t = t;
    Eigen::Index at = 0;
    for (int k : topology.feedback_sources()) {
        state.layers.push_back(stacked.segment(at, topology.width(k)));
        at += topology.width(k);
    }
    return state;
}

StepTrace rnn_forward_traced(const RnnTopology& topology, const RnnParams& params,
                             const std::vector<Eigen::VectorXd>& prev_feedback,
                             const Eigen::VectorXd& y) {
    const int L = topology.num_layers();
    if (y.size() != topology.input_dim())
        throw DimensionError("rnn_forward: observation dimension mismatch");
    if (prev_feedback.size() != topology.feedback_sources().size())
        throw DimensionError("rnn_forward: hidden-state slot count mismatch");
    for (std::size_t s = 0; s < prev_feedback.size(); ++s) {
        if (prev_feedback[s].size() != topology.width(topology.feedback_sources()[s]))
            throw DimensionError("rnn_forward: hidden-state dimension mismatch");
    }

    StepTrace trace;
    trace.act.resize(static_cast<std::size_t>(L));
    trace.pre.resize(static_cast<std::size_t>(L - 1));
    trace.act[0] = y;

    for (int l = 1; l <= L - 1; ++l) {
        Eigen::VectorXd pre =
            params.feedforward[static_cast<std::size_t>(l - 1)] *
                trace.act[static_cast<std::size_t>(l - 1)] +
            params.biases[static_cast<std::size_t>(l - 1)];
        const auto& edges = topology.feedback_edges();
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (edges[e].to_layer != l) continue;
            const int slot = topology.source_slot(edges[e].from_layer);
            pre += params.feedback[e] * prev_feedback[static_cast<std::size_t>(slot)];
        }
        if (!pre.allFinite())
            throw NumericError("rnn_forward: non-finite activation at layer " +
                               std::to_string(l));
        trace.pre[static_cast<std::size_t>(l - 1)] = pre;
        trace.act[static_cast<std::size_t>(l)] = pre.cwiseMax(0.0);
    }

    trace.output = params.feedforward[static_cast<std::size_t>(L - 1)] *
                       trace.act[static_cast<std::size_t>(L - 1)] +
                   params.biases[static_cast<std::size_t>(L - 1)];
    if (!trace.output.allFinite())
        throw NumericError("rnn_forward: non-finite output at layer " + std::to_string(L));
    return trace;
}

std::pair<Eigen::VectorXd, HiddenState> rnn_forward(const RnnTopology& topology,
                                                    const RnnParams& params,
                                                    const HiddenState& prev,
                                                    const Eigen::VectorXd& y) {
    const StepTrace trace = rnn_forward_traced(topology, params, prev.layers, y);
    HiddenState next;
    next.t = prev.t + 1;
    for (int k : topology.feedback_sources()) {
        next.layers.push_back(trace.act[static_cast<std::size_t>(k)]);
    }
    return {trace.output, std::move(next)};
}

UnrollResult rnn_unroll(const RnnTopology& topology, const RnnParams& params,
                        const Eigen::MatrixXd& observations,
                        const HiddenState* s0_override) {
    UnrollResult result{Eigen::MatrixXd(topology.output_dim(), observations.cols()),
                        s0_override ? *s0_override : HiddenState{params.init_hidden, 0}};
    for (Eigen::Index t = 0; t < observations.cols(); ++t) {
        auto [output, next] = rnn_forward(topology, params, result.final_state,
                                          observations.col(t));
        result.outputs.col(t) = output;
        result.final_state = std::move(next);
    }
    return result;
}

MemorizationNet construct_memorization_params(int horizon_T, int obs_dim,
                                              const Eigen::VectorXd& rho0, double bias_b) {
    if (horizon_T < 1) throw DimensionError("construct_memorization_params: horizon_T >= 1");
    if (obs_dim < 1) throw DimensionError("construct_memorization_params: obs_dim >= 1");
    if (rho0.size() < 1)
        throw DimensionError("construct_memorization_params: rho0 must be non-empty");
    if (!(bias_b > 0.0))
        throw DimensionError("construct_memorization_params: bias_b must be positive");

    const auto rho_dim = static_cast<int>(rho0.size());
    const int n1 = 1 + rho_dim + horizon_T * obs_dim;

    MemorizationNet net{RnnTopology(RnnVariant::Memorization,
                                    {obs_dim, n1, n1}),
                        RnnParams{}, horizon_T, obs_dim, rho_dim, bias_b};
    net.params = zero_params(net.topology);

    auto& w_in = net.params.feedforward[0];  // W(1,0): routes Y_t to the newest slot
    auto& w_self = net.params.feedback[0];   // W(1,1): counter hold + block shift
    auto& b1 = net.params.biases[0];
    auto& w_out = net.params.feedforward[1]; // the "layer 1.5" read-out
    auto& b_out = net.params.biases[1];
    auto& s0 = net.params.init_hidden[0];

    const int first_obs = net.obs_block_offset(0);
    w_in.block(first_obs, 0, obs_dim, obs_dim).setIdentity();

    w_self(0, 0) = 1.0; // time counter self-feedback
    w_self.block(1, 1, rho_dim, rho_dim).setIdentity();
    for (int block = 1; block < horizon_T; ++block) {
        // slot `block` copies what slot `block-1` held one step earlier
        w_self
            .block(net.obs_block_offset(block), net.obs_block_offset(block - 1), obs_dim,
                   obs_dim)
            .setIdentity();
    }

    b1[0] = 1.0; // counter increments every step
    b1.segment(first_obs, obs_dim).setConstant(bias_b);

    // output = stored state with every shift removed: coordinate 0 passes
    // through, every other coordinate is offset by -b
    w_out.setIdentity();
    b_out.setConstant(-bias_b);
    b_out[0] = 0.0;

    // stored form of [0, rho0, (no observations yet)]: the shift sources all
    // hold b so unfilled slots read exactly zero at every 1 <= t <= T
    s0[0] = 0.0;
    s0.segment(1, rho_dim) = rho0.array() + bias_b;
    s0.segment(first_obs, horizon_T * obs_dim).setConstant(bias_b);

    validate_params(net.topology, net.params);
    return net;
}

RnnParams init_random_params(const RnnTopology& topology, std::uint64_t seed,
                             InitScaleRule rule) {
    RnnParams params = zero_params(topology);
    RngStream rng(seed, 0);
    auto fill_uniform = [&rng](Eigen::MatrixXd& m, double scale) {
        const double limit =
            scale * std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                m(i, j) = limit * (2.0 * rng.uniform() - 1.0);
    };
    for (auto& w : params.feedforward) fill_uniform(w, 1.0);
    const double feedback_scale = rule == InitScaleRule::GlorotFeedbackDamped ? 0.5 : 1.0;
    for (auto& w : params.feedback) fill_uniform(w, feedback_scale);
    return params;
}

int param_count(const RnnTopology& topology) {
    const int L = topology.num_layers();
    int count = 0;
    for (int l = 1; l <= L; ++l) count += topology.width(l) * (topology.width(l - 1) + 1);
    for (const auto& e : topology.feedback_edges())
        count += topology.width(e.to_layer) * topology.width(e.from_layer);
    count += topology.feedback_state_dim();
    return count;
}

namespace {

template <class Fn>
void for_each_param_block(RnnParams& params, Fn&& fn) {
    for (auto& w : params.feedforward) fn(w.data(), w.size());
    for (auto& w : params.feedback) fn(w.data(), w.size());
    for (auto& b : params.biases) fn(b.data(), b.size());
    for (auto& v : params.init_hidden) fn(v.data(), v.size());
}

template <class Fn>
void for_each_param_block(const RnnParams& params, Fn&& fn) {
    for (const auto& w : params.feedforward) fn(w.data(), w.size());
    for (const auto& w : params.feedback) fn(w.data(), w.size());
    for (const auto& b : params.biases) fn(b.data(), b.size());
    for (const auto& v : params.init_hidden) fn(v.data(), v.size());
}

} // namespace

Eigen::VectorXd flatten_params(const RnnTopology& topology, const RnnParams& params) {
    validate_params(topology, params);
    Eigen::VectorXd flat(param_count(topology));
    Eigen::Index at = 0;
    for_each_param_block(params, [&](const double* data, Eigen::Index size) {
        flat.segment(at, size) = Eigen::Map<const Eigen::VectorXd>(data, size);
        at += size;
    });
    return flat;
}

void unflatten_params(const RnnTopology& topology, const Eigen::VectorXd& flat,
                      RnnParams& params) {
    if (flat.size() != param_count(topology))
        throw DimensionError("unflatten_params: flat vector size mismatch");
    if (params.feedforward.empty()) params = zero_params(topology);
    Eigen::Index at = 0;
    for_each_param_block(params, [&](double* data, Eigen::Index size) {
        Eigen::Map<Eigen::VectorXd>(data, size) = flat.segment(at, size);
        at += size;
    });
}

std::pair<RnnTopology, RnnParams> to_general_dense(const RnnTopology& topology,
                                                   const RnnParams& params) {
    validate_params(topology, params);
    RnnTopology dense(RnnVariant::GeneralDense, topology.layer_widths());
    RnnParams dense_params = zero_params(dense);
    dense_params.feedforward = params.feedforward;
    dense_params.biases = params.biases;
    for (std::size_t e = 0; e < topology.feedback_edges().size(); ++e) {
        const auto edge = topology.feedback_edges()[e];
        for (std::size_t d = 0; d < dense.feedback_edges().size(); ++d) {
            if (dense.feedback_edges()[d] == edge) {
                dense_params.feedback[d] = params.feedback[e];
            }
        }
    }
    // hidden slots widen to every hidden layer; copy what the source topology
    // carried and leave the rest at zero (those layers are never read before
    // being written in step 1 only via zeroed feedback blocks)
    for (std::size_t s = 0; s < topology.feedback_sources().size(); ++s) {
        const int layer = topology.feedback_sources()[s];
        dense_params.init_hidden[static_cast<std::size_t>(dense.source_slot(layer))] =
            params.init_hidden[s];
    }
    return {std::move(dense), std::move(dense_params)};
}

namespace {

constexpr char kMagic[8] = {'R', 'N', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw NumericError("checkpoint: truncated stream");
    return v;
}

void put_matrix_row_major(std::ostream& os, const Eigen::MatrixXd& m) {
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            os.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
}

Eigen::MatrixXd get_matrix_row_major(std::istream& is) {
    const auto rows = get_u32(is);
    const auto cols = get_u32(is);
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) {
            double v = 0;
            if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
                throw NumericError("checkpoint: truncated matrix data");
            m(i, j) = v;
        }
    }
    return m;
}

} // namespace

void save_checkpoint(std::ostream& os, const RnnTopology& topology, const RnnParams& params) {
    validate_params(topology, params);
    os.write(kMagic, sizeof(kMagic));
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(topology.variant()));
    put_u32(os, static_cast<std::uint32_t>(topology.layer_widths().size()));
    for (int w : topology.layer_widths()) put_u32(os, static_cast<std::uint32_t>(w));

    put_u32(os, static_cast<std::uint32_t>(params.feedforward.size()));
    for (const auto& w : params.feedforward) put_matrix_row_major(os, w);
    put_u32(os, static_cast<std::uint32_t>(params.feedback.size()));
    for (const auto& w : params.feedback) put_matrix_row_major(os, w);
    put_u32(os, static_cast<std::uint32_t>(params.biases.size()));
    for (const auto& b : params.biases) put_matrix_row_major(os, b);
    put_u32(os, static_cast<std::uint32_t>(params.init_hidden.size()));
    for (const auto& v : params.init_hidden) put_matrix_row_major(os, v);
}

std::pair<RnnTopology, RnnParams> load_checkpoint(std::istream& is) {
    char magic[8] = {};
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw NumericError("checkpoint: bad magic");
    if (get_u32(is) != kVersion) throw NumericError("checkpoint: unsupported version");
    const auto variant = static_cast<RnnVariant>(get_u32(is));
    if (variant != RnnVariant::GeneralDense && variant != RnnVariant::Memorization &&
        variant != RnnVariant::Recursive)
        throw NumericError("checkpoint: unknown topology variant");
    const auto n_widths = get_u32(is);
    std::vector<int> widths;
    widths.reserve(n_widths);
    for (std::uint32_t i = 0; i < n_widths; ++i)
        widths.push_back(static_cast<int>(get_u32(is)));
    RnnTopology topology(variant, std::move(widths));

    RnnParams params;
    const auto n_ff = get_u32(is);
    for (std::uint32_t i = 0; i < n_ff; ++i)
        params.feedforward.push_back(get_matrix_row_major(is));
    const auto n_fb = get_u32(is);
    for (std::uint32_t i = 0; i < n_fb; ++i)
        params.feedback.push_back(get_matrix_row_major(is));
    const auto n_b = get_u32(is);
    for (std::uint32_t i = 0; i < n_b; ++i)
        params.biases.push_back(Eigen::VectorXd(get_matrix_row_major(is)));
    const auto n_s0 = get_u32(is);
    for (std::uint32_t i = 0; i < n_s0; ++i)
        params.init_hidden.push_back(Eigen::VectorXd(get_matrix_row_major(is)));

    validate_params(topology, params);
    return {std::move(topology), std::move(params)};
}

} // namespace rnnfilter
