// ReLU recurrent state-estimator networks: the three feedback topologies,
// forward evaluation, the constructive memorization weights, and parameter
// containers with checkpoint I/O.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rnnfilter {

enum class RnnVariant {
    GeneralDense,  // feedback W(l,k) for all 1 <= l <= k <= L-1
    Memorization,  // feedback W(1,1) only
    Recursive,     // feedback W(1,L-1) only
};

// Feedback weight W(to_layer, from_layer): maps the previous step's
// activation of `from_layer` into `to_layer`'s pre-activation.
struct FeedbackEdge {
    int to_layer = 0;
    int from_layer = 0;
    bool operator==(const FeedbackEdge&) const = default;
};

// Layer widths and the feedback wiring derived from the variant. Layer 0 is
// the observation input, layers 1..L-1 are ReLU layers, layer L is the affine
// output. layer_widths has L+1 entries.
class RnnTopology {
  public:
    RnnTopology(RnnVariant variant, std::vector<int> layer_widths);

    RnnVariant variant() const { return variant_; }
    const std::vector<int>& layer_widths() const { return widths_; }
    int num_layers() const { return static_cast<int>(widths_.size()) - 1; } // L
    int width(int layer) const { return widths_[static_cast<std::size_t>(layer)]; }
    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }

    const std::vector<FeedbackEdge>& feedback_edges() const { return edges_; }
    // Sorted distinct layers whose activations are fed back; the hidden state
    // carried across time steps consists of exactly these layers.
    const std::vector<int>& feedback_sources() const { return sources_; }
    int feedback_state_dim() const { return feedback_state_dim_; }
    // Position of `layer` within feedback_sources(), or -1.
    int source_slot(int layer) const;

    bool operator==(const RnnTopology& other) const {
        return variant_ == other.variant_ && widths_ == other.widths_;
    }

  private:
    RnnVariant variant_;
    std::vector<int> widths_;
    std::vector<FeedbackEdge> edges_;
    std::vector<int> sources_;
    int feedback_state_dim_ = 0;
};

// theta = [(W(l,l-1), W(l,k)), b(l)] plus the initial hidden state s0.
struct RnnParams {
    // feedforward[l-1] = W(l,l-1) for l = 1..L; the last entry is the output map.
    std::vector<Eigen::MatrixXd> feedforward;
    // aligned with topology.feedback_edges()
    std::vector<Eigen::MatrixXd> feedback;
    // biases[l-1] = b(l) for l = 1..L
    std::vector<Eigen::VectorXd> biases;
    // aligned with topology.feedback_sources(); s0 may be trained, so entries
    // are only required to be finite, not nonnegative
    std::vector<Eigen::VectorXd> init_hidden;
};

// Shape and finiteness checks; throws DimensionError / NumericError.
void validate_params(const RnnTopology& topology, const RnnParams& params);
RnnParams zero_params(const RnnTopology& topology);

// Activations of the fed-back layers after step t (ReLU outputs, hence
// nonnegative when produced by rnn_forward).
struct HiddenState {
    std::vector<Eigen::VectorXd> layers; // aligned with feedback_sources()
    int t = 0;
};

HiddenState initial_hidden_state(const RnnTopology& topology, const RnnParams& params);
Eigen::VectorXd stack_hidden(const HiddenState& state);
HiddenState unstack_hidden(const RnnTopology& topology, const Eigen::VectorXd& stacked,
                           int t = 0);

// One evaluation step with full internals, used by training:
//   act[0] = y;  act[l] = ReLU(W(l,l-1) act[l-1] + b(l) + sum_k W(l,k) prev[k])
//   output = W(L,L-1) act[L-1] + b(L)
struct StepTrace {
    std::vector<Eigen::VectorXd> act; // act[l], l = 0..L-1
    std::vector<Eigen::VectorXd> pre; // pre[l-1] = pre-activation of layer l, l = 1..L-1
    Eigen::VectorXd output;
};

StepTrace rnn_forward_traced(const RnnTopology& topology, const RnnParams& params,
                             const std::vector<Eigen::VectorXd>& prev_feedback,
                             const Eigen::VectorXd& y);

std::pair<Eigen::VectorXd, HiddenState> rnn_forward(const RnnTopology& topology,
                                                    const RnnParams& params,
                                                    const HiddenState& prev,
                                                    const Eigen::VectorXd& y);

struct UnrollResult {
    Eigen::MatrixXd outputs; // output_dim x T, column t-1 = output after Y_t
    HiddenState final_state;
};

// Fold of rnn_forward over observation columns, starting from the params'
// init_hidden unless s0_override is given.
UnrollResult rnn_unroll(const RnnTopology& topology, const RnnParams& params,
                        const Eigen::MatrixXd& observations,
                        const HiddenState* s0_override = nullptr);

// Constructive memorization network. The single ReLU layer stores
// [t, rho0 + b, Y_t + b, ..., Y_1 + b, b, ..., b] and the affine output layer
// subtracts the shifts, so the network output at time t is exactly
//   [t, rho0^T, Y_t^T, Y_{t-1}^T, ..., Y_1^T, 0, ..., 0]^T
// provided every observation coordinate stays in (-b, inf). The time counter
// lives in coordinate 0 (unit self-feedback, bias 1); each step shifts the
// stored observation blocks one slot toward the past.
struct MemorizationNet {
    RnnTopology topology; // Memorization variant, L = 2
    RnnParams params;
    int horizon_T = 0;
    int obs_dim = 0;
    int rho0_dim = 0;
    double bias_b = 0.0;

    int state_dim() const { return 1 + rho0_dim + horizon_T * obs_dim; }
    int obs_block_offset(int block) const { return 1 + rho0_dim + block * obs_dim; }
};

MemorizationNet construct_memorization_params(int horizon_T, int obs_dim,
                                              const Eigen::VectorXd& rho0, double bias_b);

enum class InitScaleRule {
    GlorotFeedbackDamped, // uniform +-sqrt(6/(fan_in+fan_out)); feedback scaled by 0.5
    Glorot,               // same without the feedback damping
};

// Biases and init_hidden start at zero.
RnnParams init_random_params(const RnnTopology& topology, std::uint64_t seed,
                             InitScaleRule rule = InitScaleRule::GlorotFeedbackDamped);

// Flat parameter vector in a fixed order (feedforward, feedback, biases,
// init_hidden); shared by the optimizer and the finite-difference probe.
int param_count(const RnnTopology& topology);
Eigen::VectorXd flatten_params(const RnnTopology& topology, const RnnParams& params);
void unflatten_params(const RnnTopology& topology, const Eigen::VectorXd& flat,
                      RnnParams& params);

// Re-expresses a network in the GeneralDense wiring; feedback blocks absent
// from the source topology are zero. Outputs are identical.
std::pair<RnnTopology, RnnParams> to_general_dense(const RnnTopology& topology,
                                                   const RnnParams& params);

// Checkpoint: self-describing binary container (magic, version tag, variant,
// layer widths, then every matrix/vector as 64-bit little-endian row-major
// data). Round-trips bit-exactly.
void save_checkpoint(std::ostream& os, const RnnTopology& topology, const RnnParams& params);
std::pair<RnnTopology, RnnParams> load_checkpoint(std::istream& is);

} // namespace rnnfilter
