#include "rnnfilter/kalman.hpp"

#include <ostream>

#include "rnnfilter/errors.hpp"
#include "csv_util.hpp"

namespace rnnfilter {

namespace {
constexpr double kConditionLimit = 1e14;
}

KalmanState kalman_init(const LinearGaussianModel& model) {
    KalmanState s;
    s.mean = model.init_mean;
    s.cov = model.init_cov;
    s.gain = Eigen::MatrixXd::Zero(model.state_dim(), model.obs_dim());
    s.t = 0;
    return s;
}

namespace {

// Shared by kalman_step and the Riccati iteration.
struct CovUpdate {
    Eigen::MatrixXd predicted; // F C F^T + Q
    Eigen::MatrixXd gain;
    Eigen::MatrixXd cov; // symmetrized (I - K H) predicted
};

CovUpdate covariance_update(const LinearGaussianModel& model, const Eigen::MatrixXd& cov) {
    CovUpdate u;
    u.predicted =
        model.f_matrix * cov * model.f_matrix.transpose() + model.q_cov;
    Eigen::MatrixXd innovation =
        model.r_cov + model.h_matrix * u.predicted * model.h_matrix.transpose();
    innovation = 0.5 * (innovation + innovation.transpose());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(innovation, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    if (!(lmin > 0.0) || lmax / lmin > kConditionLimit)
        throw SingularityError("innovation covariance numerically singular");

    // K = P H^T S^{-1}, computed as (S^{-1} H P)^T with P symmetric
    const Eigen::LLT<Eigen::MatrixXd> llt(innovation);
    u.gain = llt.solve(model.h_matrix * u.predicted).transpose();

    const Eigen::MatrixXd identity =
        Eigen::MatrixXd::Identity(model.state_dim(), model.state_dim());
    Eigen::MatrixXd next_cov = (identity - u.gain * model.h_matrix) * u.predicted;
    u.cov = 0.5 * (next_cov + next_cov.transpose());
    return u;
}

} // namespace

KalmanState kalman_step(const LinearGaussianModel& model, const KalmanState& prev,
                        const Eigen::VectorXd& y) {
    if (prev.mean.size() != model.state_dim() || prev.cov.rows() != model.state_dim() ||
        prev.cov.cols() != model.state_dim())
        throw DimensionError("kalman_step: state dimensions inconsistent with model");
    if (y.size() != model.obs_dim())
        throw DimensionError("kalman_step: observation dimension mismatch");

    const CovUpdate u = covariance_update(model, prev.cov);
    KalmanState next;
    next.gain = u.gain;
    next.mean = (model.f_matrix - u.gain * model.h_matrix * model.f_matrix) * prev.mean +
                u.gain * y;
    next.cov = u.cov;
    next.t = prev.t + 1;
    return next;
}

std::vector<KalmanState> kalman_filter(const LinearGaussianModel& model,
                                       const Eigen::MatrixXd& observations) {
    model.validate();
    if (observations.cols() > 0 && observations.rows() != model.obs_dim())
        throw DimensionError("kalman_filter: observation dimension mismatch");
    std::vector<KalmanState> states;
    states.reserve(static_cast<std::size_t>(observations.cols()) + 1);
    states.push_back(kalman_init(model));
    for (Eigen::Index t = 0; t < observations.cols(); ++t) {
        states.push_back(kalman_step(model, states.back(), observations.col(t)));
    }
    return states;
}

Eigen::MatrixXd kalman_mean_sequence(const LinearGaussianModel& model,
                                     const Eigen::MatrixXd& observations) {
    const auto states = kalman_filter(model, observations);
    Eigen::MatrixXd means(model.state_dim(), observations.cols());
    for (Eigen::Index t = 0; t < observations.cols(); ++t) {
        means.col(t) = states[static_cast<std::size_t>(t) + 1].mean;
    }
    return means;
}

Eigen::MatrixXd riccati_fixed_point(const LinearGaussianModel& model, double tol,
                                    int max_iter) {
    model.validate();
    if (!(tol > 0.0)) throw DimensionError("riccati_fixed_point: tol must be positive");
    if (max_iter < 1) throw DimensionError("riccati_fixed_point: max_iter must be positive");

    Eigen::MatrixXd cov = model.init_cov;
    for (int iter = 0; iter < max_iter; ++iter) {
        const Eigen::MatrixXd next = covariance_update(model, cov).cov;
        const double diff = (next - cov).cwiseAbs().maxCoeff();
        cov = next;
        if (diff < tol) return cov;
    }
    throw RiccatiNonConvergence("riccati_fixed_point: no convergence within max_iter", cov,
                                max_iter);
}

Eigen::MatrixXd stacked_transition(const LinearGaussianModel& model,
                                   const Eigen::MatrixXd& gain) {
    const int dx = model.state_dim();
    if (gain.rows() != dx || gain.cols() != model.obs_dim())
        throw DimensionError("stacked_transition: gain must be d_x x d_y");
    const Eigen::MatrixXd khf = gain * model.h_matrix * model.f_matrix;
    Eigen::MatrixXd stacked = Eigen::MatrixXd::Zero(2 * dx, 2 * dx);
    stacked.topLeftCorner(dx, dx) = model.f_matrix - khf;
    stacked.topRightCorner(dx, dx) = khf;
    stacked.bottomRightCorner(dx, dx) = model.f_matrix;
    return stacked;
}

void write_filter_trace_csv(std::ostream& os, const std::vector<KalmanState>& states) {
    if (states.empty()) return;
    const auto dx = states[0].mean.size();
    const auto dy = states[0].gain.cols();
    os << "t";
    for (Eigen::Index i = 1; i <= dx; ++i) os << ",mean_" << i;
    for (Eigen::Index i = 1; i <= dx; ++i)
        for (Eigen::Index j = 1; j <= dx; ++j) os << ",cov_" << i << j;
    for (Eigen::Index i = 1; i <= dx; ++i)
        for (Eigen::Index j = 1; j <= dy; ++j) os << ",gain_" << i << j;
    os << "\n";
    for (const auto& s : states) {
        os << s.t;
        for (Eigen::Index i = 0; i < dx; ++i) os << ',' << detail::format_double(s.mean[i]);
        for (Eigen::Index i = 0; i < dx; ++i)
            for (Eigen::Index j = 0; j < dx; ++j)
                os << ',' << detail::format_double(s.cov(i, j));
        for (Eigen::Index i = 0; i < dx; ++i)
            for (Eigen::Index j = 0; j < dy; ++j)
                os << ',' << detail::format_double(s.gain(i, j));
        os << "\n";
    }
}

} // namespace rnnfilter
