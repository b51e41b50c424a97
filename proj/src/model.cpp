#include "rnnfilter/model.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/parallel.hpp"
#include "rnnfilter/rng.hpp"
#include "csv_util.hpp"

namespace rnnfilter {

namespace {

constexpr double kPsdEigTol = 1e-10;

bool is_symmetric(const Eigen::MatrixXd& m) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale;
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

} // namespace

void LinearGaussianModel::validate() const {
    const auto dx = f_matrix.rows();
    const auto dy = h_matrix.rows();
    if (dx == 0 || f_matrix.cols() != dx)
        throw InvalidModelError("F must be square and non-empty");
    if (dy == 0 || h_matrix.cols() != dx)
        throw InvalidModelError("H must be d_y x d_x with d_y >= 1");
    if (q_cov.rows() != dx || q_cov.cols() != dx)
        throw InvalidModelError("Q must be d_x x d_x");
    if (r_cov.rows() != dy || r_cov.cols() != dy)
        throw InvalidModelError("R must be d_y x d_y");
    if (init_mean.size() != dx) throw InvalidModelError("init_mean must have length d_x");
    if (init_cov.rows() != dx || init_cov.cols() != dx)
        throw InvalidModelError("init_cov must be d_x x d_x");

    for (const auto* m : {&f_matrix, &h_matrix, &q_cov, &r_cov, &init_cov}) {
        if (!m->allFinite()) throw InvalidModelError("model matrices must be finite");
    }
    if (!init_mean.allFinite()) throw InvalidModelError("init_mean must be finite");

    if (!is_symmetric(q_cov)) throw InvalidModelError("Q must be symmetric");
    if (!is_symmetric(r_cov)) throw InvalidModelError("R must be symmetric");
    if (!is_symmetric(init_cov)) throw InvalidModelError("init_cov must be symmetric");

    if (min_eigenvalue(q_cov) < -kPsdEigTol)
        throw InvalidModelError("Q must be positive semi-definite");
    if (min_eigenvalue(init_cov) < -kPsdEigTol)
        throw InvalidModelError("init_cov must be positive semi-definite");
    if (min_eigenvalue(r_cov) <= 0.0)
        throw InvalidModelError("R must be positive definite");
}

LinearGaussianModel LinearGaussianModel::scalar(double alpha, double beta, double init_var,
                                                double init_mean) {
    LinearGaussianModel m;
    m.f_matrix = Eigen::MatrixXd::Constant(1, 1, alpha);
    m.h_matrix = Eigen::MatrixXd::Identity(1, 1);
    m.q_cov = Eigen::MatrixXd::Identity(1, 1);
    m.r_cov = Eigen::MatrixXd::Constant(1, 1, beta * beta);
    m.init_mean = Eigen::VectorXd::Constant(1, init_mean);
    m.init_cov = Eigen::MatrixXd::Constant(1, 1, init_var);
    return m;
}

Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols()) throw InvalidModelError("covariance must be square");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) return llt.matrixL();

    // Singular PSD case: clamp tiny negative eigenvalues, reject real ones.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    if (es.info() != Eigen::Success)
        throw InvalidModelError("covariance eigendecomposition failed");
    Eigen::VectorXd evals = es.eigenvalues();
    for (Eigen::Index i = 0; i < evals.size(); ++i) {
        if (evals[i] < -kPsdEigTol)
            throw InvalidModelError("covariance is not positive semi-definite");
        if (evals[i] < 0.0) evals[i] = 0.0;
    }
    return es.eigenvectors() * evals.cwiseSqrt().asDiagonal();
}

TrajectoryBatch sample_trajectories(const LinearGaussianModel& model, int horizon_T,
                                    int count_N, std::uint64_t seed) {
    model.validate();
    if (horizon_T < 1) throw DimensionError("horizon_T must be positive");
    if (count_N < 1) throw DimensionError("count_N must be positive");

    const int dx = model.state_dim();
    const int dy = model.obs_dim();
    const Eigen::MatrixXd q_factor = covariance_factor(model.q_cov);
    const Eigen::MatrixXd r_factor = covariance_factor(model.r_cov);
    const Eigen::MatrixXd c0_factor = covariance_factor(model.init_cov);

    TrajectoryBatch batch;
    batch.seed = seed;
    batch.states.assign(static_cast<std::size_t>(count_N),
                        Eigen::MatrixXd(dx, horizon_T + 1));
    batch.observations.assign(static_cast<std::size_t>(count_N),
                              Eigen::MatrixXd(dy, horizon_T));

    parallel_for(count_N, [&](int n) {
        RngStream rng(seed, static_cast<std::uint64_t>(n));
        Eigen::VectorXd zx(dx), zy(dy);
        auto& x = batch.states[static_cast<std::size_t>(n)];
        auto& y = batch.observations[static_cast<std::size_t>(n)];

        for (int i = 0; i < dx; ++i) zx[i] = rng.normal();
        x.col(0) = model.init_mean + c0_factor * zx;
        for (int t = 1; t <= horizon_T; ++t) {
            for (int i = 0; i < dx; ++i) zx[i] = rng.normal();
            x.col(t) = model.f_matrix * x.col(t - 1) + q_factor * zx;
            for (int i = 0; i < dy; ++i) zy[i] = rng.normal();
            y.col(t - 1) = model.h_matrix * x.col(t) + r_factor * zy;
        }
    });
    return batch;
}

double spectral_radius(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() == 0)
        throw DimensionError("spectral_radius requires a non-empty square matrix");
    if (!m.allFinite()) throw DimensionError("spectral_radius requires finite entries");
    Eigen::EigenSolver<Eigen::MatrixXd> es(m, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

StationarityDiagnostic check_stationarity_condition(const LinearGaussianModel& model,
                                                    double tol_margin) {
    model.validate();
    StationarityDiagnostic diag;
    diag.tol_margin = tol_margin;
    diag.spectral_radius = spectral_radius(model.f_matrix);
    diag.stationary = diag.spectral_radius < 1.0 - tol_margin;
    return diag;
}

void write_batch_csv(std::ostream& os, const TrajectoryBatch& batch) {
    const int dx = batch.state_dim();
    const int dy = batch.obs_dim();
    os << "n,t";
    for (int i = 1; i <= dx; ++i) os << ",x_" << i;
    for (int i = 1; i <= dy; ++i) os << ",y_" << i;
    os << "\n";
    for (int n = 0; n < batch.count(); ++n) {
        const auto& x = batch.states[static_cast<std::size_t>(n)];
        const auto& y = batch.observations[static_cast<std::size_t>(n)];
        for (int t = 0; t <= batch.horizon(); ++t) {
            os << n << ',' << t;
            for (int i = 0; i < dx; ++i) os << ',' << detail::format_double(x(i, t));
            for (int i = 0; i < dy; ++i) {
                os << ',';
                if (t > 0) os << detail::format_double(y(i, t - 1));
            }
            os << "\n";
        }
    }
}

TrajectoryBatch read_batch_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DimensionError("batch csv: missing header");
    const auto header = detail::split_csv_line(line);
    int dx = 0, dy = 0;
    for (const auto& f : header) {
        if (f.rfind("x_", 0) == 0) ++dx;
        if (f.rfind("y_", 0) == 0) ++dy;
    }
    if (header.size() < 3 || header[0] != "n" || header[1] != "t" || dx == 0 || dy == 0)
        throw DimensionError("batch csv: unrecognized header");

    // rows keyed by (n, t); the grid must come out rectangular
    std::map<std::pair<long long, long long>, std::pair<Eigen::VectorXd, Eigen::VectorXd>>
        rows;
    long long max_n = -1, max_t = -1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != static_cast<std::size_t>(2 + dx + dy))
            throw DimensionError("batch csv: wrong field count");
        long long n = 0, t = 0;
        if (!detail::parse_int(fields[0], n) || !detail::parse_int(fields[1], t))
            throw DimensionError("batch csv: bad n/t field");
        Eigen::VectorXd x(dx), y(dy);
        for (int i = 0; i < dx; ++i) {
            if (!detail::parse_double(fields[static_cast<std::size_t>(2 + i)], x[i]))
                throw DimensionError("batch csv: bad state field");
        }
        if (t == 0) {
            y.setZero();
        } else {
            for (int i = 0; i < dy; ++i) {
                if (!detail::parse_double(fields[static_cast<std::size_t>(2 + dx + i)], y[i]))
                    throw DimensionError("batch csv: bad observation field");
            }
        }
        rows[{n, t}] = {x, y};
        max_n = std::max(max_n, n);
        max_t = std::max(max_t, t);
    }
    if (max_n < 0 || max_t < 1) throw DimensionError("batch csv: no data rows");
    const auto count = static_cast<std::size_t>(max_n + 1);
    const int horizon = static_cast<int>(max_t);
    if (rows.size() != count * static_cast<std::size_t>(horizon + 1))
        throw DimensionError("batch csv: missing rows");

    TrajectoryBatch batch;
    batch.states.assign(count, Eigen::MatrixXd(dx, horizon + 1));
    batch.observations.assign(count, Eigen::MatrixXd(dy, horizon));
    for (const auto& [key, value] : rows) {
        const auto n = static_cast<std::size_t>(key.first);
        const auto t = static_cast<int>(key.second);
        batch.states[n].col(t) = value.first;
        if (t > 0) batch.observations[n].col(t - 1) = value.second;
    }
    return batch;
}

} // namespace rnnfilter
