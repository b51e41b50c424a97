#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rnnfilter {

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidModelError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Innovation covariance numerically singular (condition number beyond limit).
struct SingularityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite value produced where the contract requires finite arithmetic.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RiccatiNonConvergence : std::runtime_error {
    RiccatiNonConvergence(const std::string& msg, Eigen::MatrixXd iterate, int iterations)
        : std::runtime_error(msg), last_iterate(std::move(iterate)), iterations_run(iterations) {}
    Eigen::MatrixXd last_iterate;
    int iterations_run;
};

// All particle weights underflowed to zero at step t.
struct ParticleDegeneracy : std::runtime_error {
    ParticleDegeneracy(const std::string& msg, int step) : std::runtime_error(msg), t(step) {}
    int t;
};

struct TrainingDiverged : std::runtime_error {
    TrainingDiverged(const std::string& msg, int at_epoch, std::vector<double> history)
        : std::runtime_error(msg), epoch(at_epoch), loss_history(std::move(history)) {}
    int epoch;
    std::vector<double> loss_history; // full-batch losses recorded before divergence
};

// A filter closure broke the evaluation contract (wrong output shape).
struct ContractViolation : std::runtime_error {
    ContractViolation(const std::string& msg, std::string method_name)
        : std::runtime_error(msg), method(std::move(method_name)) {}
    std::string method;
};

struct ConfigError : std::runtime_error {
    ConfigError(const std::string& msg, std::string field_path)
        : std::runtime_error(msg), field(std::move(field_path)) {}
    std::string field;
};

} // namespace rnnfilter
