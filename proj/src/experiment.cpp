#include "rnnfilter/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "rnnfilter/errors.hpp"
#include "rnnfilter/particle.hpp"
#include "csv_util.hpp"

namespace rnnfilter {

using nlohmann::json;

namespace {

std::string join_path(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

const json& require(const json& obj, const std::string& key, const std::string& parent) {
    if (!obj.is_object())
        throw ConfigError(parent + ": expected an object", parent);
    const auto it = obj.find(key);
    if (it == obj.end()) {
        const std::string path = join_path(parent, key);
        throw ConfigError(path + ": required field missing", path);
    }
    return *it;
}

double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number", path);
    return v.get<double>();
}

long long as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer", path);
    return v.get<long long>();
}

bool as_bool(const json& v, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean", path);
    return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string", path);
    return v.get<std::string>();
}

Eigen::VectorXd as_vector(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty())
        throw ConfigError(path + ": expected a non-empty numeric array", path);
    Eigen::VectorXd out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] =
        as_double(v[i], path + "[" + std::to_string(i) + "]");
    return out;
}

Eigen::MatrixXd as_matrix(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty())
        throw ConfigError(path + ": expected a non-empty array of rows", path);
    const std::size_t rows = v.size();
    std::size_t cols = 0;
    Eigen::MatrixXd out;
    for (std::size_t i = 0; i < rows; ++i) {
        const auto& row = v[i];
        if (!row.is_array() || row.empty())
            throw ConfigError(path + ": each row must be a non-empty numeric array", path);
        if (i == 0) {
            cols = row.size();
            out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        } else if (row.size() != cols) {
            throw ConfigError(path + ": ragged rows", path);
        }
        for (std::size_t j = 0; j < cols; ++j) {
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                as_double(row[j], path + "[" + std::to_string(i) + "][" +
                                      std::to_string(j) + "]");
        }
    }
    return out;
}

std::pair<int, int> as_window(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 2)
        throw ConfigError(path + ": expected [first, last]", path);
    return {static_cast<int>(as_int(v[0], path + "[0]")),
            static_cast<int>(as_int(v[1], path + "[1]"))};
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

std::string variant_name(RnnVariant v) {
    switch (v) {
        case RnnVariant::GeneralDense: return "general_dense";
        case RnnVariant::Memorization: return "memorization";
        case RnnVariant::Recursive: return "recursive";
    }
    return "recursive";
}

RnnVariant variant_from_name(const std::string& name, const std::string& path) {
    if (name == "general_dense") return RnnVariant::GeneralDense;
    if (name == "memorization") return RnnVariant::Memorization;
    if (name == "recursive") return RnnVariant::Recursive;
    throw ConfigError(path + ": unknown variant '" + name +
                          "' (expected general_dense|memorization|recursive)",
                      path);
}

} // namespace

void ExperimentConfig::validate() const {
    try {
        model.validate();
    } catch (const InvalidModelError& e) {
        throw ConfigError(std::string("model: ") + e.what(), "model");
    }
    if (rnn_widths.size() < 3)
        throw ConfigError("rnn.widths: need at least [input, hidden, output]", "rnn.widths");
    for (int w : rnn_widths) {
        if (w < 1) throw ConfigError("rnn.widths: widths must be >= 1", "rnn.widths");
    }
    if (rnn_widths.front() != model.obs_dim())
        throw ConfigError("rnn.widths[0] must equal the observation dimension d_y",
                          "rnn.widths");
    if (rnn_widths.back() != model.state_dim())
        throw ConfigError("rnn.widths must end at the state dimension d_x", "rnn.widths");
    train.validate();
    if (particle_enabled && particle_count < 1)
        throw ConfigError("particle.count must be >= 1 when enabled", "particle.count");
    if (n_test < 1) throw ConfigError("eval.n_test must be positive", "eval.n_test");
    if (horizon_T_test < 1)
        throw ConfigError("eval.horizon_T_test must be positive", "eval.horizon_T_test");
    for (auto [name, w] : {std::pair<const char*, std::pair<int, int>>{"eval.early_window",
                                                                       early_window},
                           {"eval.late_window", late_window}}) {
        if (w.first < 1 || w.second < w.first || w.second > horizon_T_test)
            throw ConfigError(std::string(name) + ": window out of range", name);
    }
    if (early_window.second >= late_window.first)
        throw ConfigError("eval windows must not overlap", "eval.late_window");
    if (!(accumulation_threshold > 0.0))
        throw ConfigError("eval.accumulation_threshold must be positive",
                          "eval.accumulation_threshold");
    if (output_directory.empty())
        throw ConfigError("output.directory must be non-empty", "output.directory");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "");
    }

    ExperimentConfig cfg;

    const json& model = require(root, "model", "");
    cfg.model.f_matrix = as_matrix(require(model, "F", "model"), "model.F");
    cfg.model.h_matrix = as_matrix(require(model, "H", "model"), "model.H");
    cfg.model.q_cov = as_matrix(require(model, "Q", "model"), "model.Q");
    cfg.model.r_cov = as_matrix(require(model, "R", "model"), "model.R");
    cfg.model.init_mean = as_vector(require(model, "init_mean", "model"), "model.init_mean");
    cfg.model.init_cov = as_matrix(require(model, "init_cov", "model"), "model.init_cov");

    const json& rnn = require(root, "rnn", "");
    cfg.rnn_variant =
        variant_from_name(as_string(require(rnn, "variant", "rnn"), "rnn.variant"),
                          "rnn.variant");
    cfg.rnn_widths.clear();
    const json& widths = require(rnn, "widths", "rnn");
    if (!widths.is_array()) throw ConfigError("rnn.widths: expected an array", "rnn.widths");
    for (std::size_t i = 0; i < widths.size(); ++i) {
        cfg.rnn_widths.push_back(static_cast<int>(
            as_int(widths[i], "rnn.widths[" + std::to_string(i) + "]")));
    }

    const json& train = require(root, "train", "");
    cfg.train.horizon_T_train =
        static_cast<int>(as_int(require(train, "horizon_T", "train"), "train.horizon_T"));
    cfg.train.count_N_train =
        static_cast<int>(as_int(require(train, "count_N", "train"), "train.count_N"));
    cfg.train.epochs =
        static_cast<int>(as_int(require(train, "epochs", "train"), "train.epochs"));
    cfg.train.minibatch_size = static_cast<int>(
        as_int(require(train, "minibatch_size", "train"), "train.minibatch_size"));
    cfg.train.learning_rate =
        as_double(require(train, "learning_rate", "train"), "train.learning_rate");
    const std::string opt =
        as_string(require(train, "optimizer", "train"), "train.optimizer");
    if (opt == "sgd") {
        cfg.train.optimizer = OptimizerKind::Sgd;
    } else if (opt == "adam") {
        cfg.train.optimizer = OptimizerKind::Adam;
    } else {
        throw ConfigError("train.optimizer: expected sgd|adam", "train.optimizer");
    }
    if (train.contains("adam")) {
        const json& adam = train["adam"];
        if (adam.contains("beta1")) cfg.train.adam.beta1 = as_double(adam["beta1"], "train.adam.beta1");
        if (adam.contains("beta2")) cfg.train.adam.beta2 = as_double(adam["beta2"], "train.adam.beta2");
        if (adam.contains("eps")) cfg.train.adam.eps = as_double(adam["eps"], "train.adam.eps");
    }
    if (train.contains("grad_clip_norm")) {
        const json& clip = train["grad_clip_norm"];
        if (clip.is_null()) {
            cfg.train.grad_clip_norm.reset();
        } else {
            cfg.train.grad_clip_norm = as_double(clip, "train.grad_clip_norm");
        }
    }
    if (train.contains("train_s0"))
        cfg.train.train_s0 = as_bool(train["train_s0"], "train.train_s0");

    const json& particle = require(root, "particle", "");
    cfg.particle_count = static_cast<int>(
        as_int(require(particle, "count", "particle"), "particle.count"));
    cfg.particle_enabled = as_bool(require(particle, "enabled", "particle"),
                                   "particle.enabled");

    const json& eval = require(root, "eval", "");
    cfg.n_test = static_cast<int>(as_int(require(eval, "n_test", "eval"), "eval.n_test"));
    cfg.horizon_T_test = static_cast<int>(
        as_int(require(eval, "horizon_T_test", "eval"), "eval.horizon_T_test"));
    cfg.early_window = as_window(require(eval, "early_window", "eval"), "eval.early_window");
    cfg.late_window = as_window(require(eval, "late_window", "eval"), "eval.late_window");
    cfg.accumulation_threshold = as_double(
        require(eval, "accumulation_threshold", "eval"), "eval.accumulation_threshold");

    const json& output = require(root, "output", "");
    cfg.output_directory =
        as_string(require(output, "directory", "output"), "output.directory");
    if (output.contains("formats")) {
        cfg.output_formats.clear();
        for (const auto& f : output["formats"])
            cfg.output_formats.push_back(as_string(f, "output.formats"));
    }

    const json& seed = require(root, "master_seed", "");
    if (!seed.is_number_unsigned())
        throw ConfigError("master_seed: expected an unsigned integer", "master_seed");
    cfg.master_seed = seed.get<std::uint64_t>();

    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string(), "");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_experiment_config(buffer.str());
}

std::string config_to_json(const ExperimentConfig& config) {
    json root;
    root["model"] = {{"F", matrix_to_json(config.model.f_matrix)},
                     {"H", matrix_to_json(config.model.h_matrix)},
                     {"Q", matrix_to_json(config.model.q_cov)},
                     {"R", matrix_to_json(config.model.r_cov)},
                     {"init_mean", vector_to_json(config.model.init_mean)},
                     {"init_cov", matrix_to_json(config.model.init_cov)}};
    root["rnn"] = {{"variant", variant_name(config.rnn_variant)},
                   {"widths", config.rnn_widths}};
    json train = {{"horizon_T", config.train.horizon_T_train},
                  {"count_N", config.train.count_N_train},
                  {"epochs", config.train.epochs},
                  {"minibatch_size", config.train.minibatch_size},
                  {"learning_rate", config.train.learning_rate},
                  {"optimizer",
                   config.train.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
                  {"adam",
                   {{"beta1", config.train.adam.beta1},
                    {"beta2", config.train.adam.beta2},
                    {"eps", config.train.adam.eps}}},
                  {"train_s0", config.train.train_s0}};
    if (config.train.grad_clip_norm) {
        train["grad_clip_norm"] = *config.train.grad_clip_norm;
    } else {
        train["grad_clip_norm"] = nullptr;
    }
    root["train"] = std::move(train);
    root["particle"] = {{"count", config.particle_count},
                        {"enabled", config.particle_enabled}};
    root["eval"] = {{"n_test", config.n_test},
                    {"horizon_T_test", config.horizon_T_test},
                    {"early_window", {config.early_window.first, config.early_window.second}},
                    {"late_window", {config.late_window.first, config.late_window.second}},
                    {"accumulation_threshold", config.accumulation_threshold}};
    root["output"] = {{"directory", config.output_directory},
                      {"formats", config.output_formats}};
    root["master_seed"] = config.master_seed;
    return root.dump(2);
}

DerivedSeeds derive_experiment_seeds(std::uint64_t master_seed) {
    DerivedSeeds s;
    s.train_data = derive_seed(master_seed, "train-data");
    s.train = derive_seed(master_seed, "train");
    s.test_data = derive_seed(master_seed, "test-data");
    s.particle = derive_seed(master_seed, "particle");
    return s;
}

FilterMethod make_kalman_method(const LinearGaussianModel& model, std::string name) {
    return FilterMethod{std::move(name),
                        [model](const Eigen::MatrixXd& obs, int) {
                            return kalman_mean_sequence(model, obs);
                        }};
}

FilterMethod make_rnn_method(const RnnTopology& topology, const RnnParams& params,
                             std::string name) {
    validate_params(topology, params);
    return FilterMethod{std::move(name),
                        [topology, params](const Eigen::MatrixXd& obs, int) {
                            return rnn_unroll(topology, params, obs).outputs;
                        }};
}

FilterMethod make_pf_method(const LinearGaussianModel& model, int particle_count,
                            std::uint64_t seed, std::string name) {
    return FilterMethod{std::move(name),
                        [model, particle_count, seed](const Eigen::MatrixXd& obs, int n) {
                            return pf_mean_sequence(model, obs, particle_count,
                                                    derive_seed(seed, "traj",
                                                                static_cast<std::uint64_t>(n)));
                        }};
}

FilterMethod make_zero_method(int state_dim, std::string name) {
    return FilterMethod{std::move(name),
                        [state_dim](const Eigen::MatrixXd& obs, int) {
                            return Eigen::MatrixXd::Zero(state_dim, obs.cols()).eval();
                        }};
}

SeededFilter make_kalman_seeded_filter(const LinearGaussianModel& model) {
    return SeededFilter{"kalman-mean", model.init_mean,
                        [model](const Eigen::MatrixXd& obs, const Eigen::VectorXd& init) {
                            LinearGaussianModel m = model;
                            m.init_mean = init;
                            return kalman_mean_sequence(m, obs);
                        }};
}

SeededFilter make_rnn_seeded_filter(const RnnTopology& topology, const RnnParams& params) {
    validate_params(topology, params);
    Eigen::VectorXd base = stack_hidden(HiddenState{params.init_hidden, 0});
    return SeededFilter{"rnn-hidden", std::move(base),
                        [topology, params](const Eigen::MatrixXd& obs,
                                           const Eigen::VectorXd& init) {
                            const HiddenState s0 = unstack_hidden(topology, init);
                            return rnn_unroll(topology, params, obs, &s0).outputs;
                        }};
}

namespace {

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
    if (const char* env = std::getenv("RNNFILTER_OUTPUT_DIR")) {
        if (*env != '\0') return std::filesystem::path(env);
    }
    return std::filesystem::path(config.output_directory);
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

json accumulation_to_json(const AccumulationCheck& check) {
    json j;
    j["flagged"] = check.flagged;
    j["ratio"] = std::isfinite(check.ratio) ? json(check.ratio) : json();
    j["early_mean"] = check.early_mean;
    j["late_mean"] = check.late_mean;
    j["threshold"] = check.threshold;
    return j;
}

void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& config,
                    const DerivedSeeds& seeds, const std::string& status,
                    const std::map<std::string, AccumulationCheck>& accumulation,
                    double wall_seconds, const std::vector<std::string>& artifacts) {
    json manifest;
    manifest["status"] = status;
    manifest["config"] = json::parse(config_to_json(config));
    manifest["seeds"] = {{"master", config.master_seed},
                         {"train_data", seeds.train_data},
                         {"train", seeds.train},
                         {"test_data", seeds.test_data},
                         {"particle", seeds.particle}};
    json acc;
    for (const auto& [name, check] : accumulation) acc[name] = accumulation_to_json(check);
    manifest["accumulation"] = std::move(acc);
    manifest["wall_clock_seconds"] = wall_seconds;
    manifest["artifacts"] = artifacts;
    write_text_file(dir / "run_manifest.json", manifest.dump(2) + "\n");
}

} // namespace

RunOutcome run_experiment(const ExperimentConfig& config) {
    config.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto elapsed = [&start] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    };

    const DerivedSeeds seeds = derive_experiment_seeds(config.master_seed);
    const std::filesystem::path out_dir = resolve_output_dir(config);
    std::filesystem::create_directories(out_dir);

    const RnnTopology topology(config.rnn_variant, config.rnn_widths);
    const TrajectoryBatch train_data =
        sample_trajectories(config.model, config.train.horizon_T_train,
                            config.train.count_N_train, seeds.train_data);

    TrainConfig train_config = config.train;
    train_config.seed = seeds.train;

    TrainResult trained;
    try {
        trained = train(train_config, topology, train_data);
    } catch (const TrainingDiverged& e) {
        // keep partial artifacts for the postmortem
        std::ostringstream history;
        write_loss_history_csv(history, e.loss_history);
        write_text_file(out_dir / "loss_history.csv", history.str());
        write_manifest(out_dir, config, seeds, "training-diverged", {}, elapsed(), {
            "loss_history.csv",
        });
        throw;
    }

    {
        std::ostringstream history;
        write_loss_history_csv(history, trained.loss_history);
        write_text_file(out_dir / "loss_history.csv", history.str());
        std::ofstream ckpt(out_dir / "rnn_checkpoint.bin", std::ios::binary);
        save_checkpoint(ckpt, topology, trained.params);
    }

    std::vector<FilterMethod> methods;
    methods.push_back(make_kalman_method(config.model));
    methods.push_back(make_rnn_method(topology, trained.params));
    methods.push_back(make_zero_method(config.model.state_dim()));
    if (config.particle_enabled) {
        methods.push_back(make_pf_method(config.model, config.particle_count,
                                         seeds.particle));
    }

    RunOutcome outcome;
    outcome.output_directory = out_dir;
    outcome.loss_history = trained.loss_history;
    outcome.report = evaluate_filters(config.model, make_kalman_method(config.model),
                                      methods, config.n_test, config.horizon_T_test,
                                      seeds.test_data);
    outcome.report.config_echo = config_to_json(config);

    {
        std::ostringstream report;
        write_eval_report_csv(report, outcome.report);
        write_text_file(out_dir / "eval_report.csv", report.str());
    }

    for (const auto& name : {std::string("rnn"), std::string("pf")}) {
        bool present = false;
        for (const auto& c : outcome.report.methods) present |= c.name == name;
        if (!present) continue;
        outcome.accumulation[name] =
            detect_error_accumulation(outcome.report, name, config.early_window,
                                      config.late_window, config.accumulation_threshold);
    }

    outcome.wall_clock_seconds = elapsed();
    write_manifest(out_dir, config, seeds, "ok", outcome.accumulation,
                   outcome.wall_clock_seconds,
                   {"eval_report.csv", "loss_history.csv", "rnn_checkpoint.bin"});
    return outcome;
}

int run_experiment_cli(const std::filesystem::path& config_path, std::ostream& out,
                       std::ostream& err) {
    ExperimentConfig config;
    try {
        config = load_experiment_config(config_path);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    }
    try {
        const RunOutcome outcome = run_experiment(config);
        out << "run complete: " << outcome.output_directory.string() << " ("
            << detail::format_double(outcome.wall_clock_seconds) << " s)\n";
        for (const auto& [name, check] : outcome.accumulation) {
            out << "  " << name << " late/early rmse ratio "
                << detail::format_double(check.ratio)
                << (check.flagged ? "  [accumulation]" : "") << "\n";
        }
        return 0;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "run failed: " << e.what() << "\n";
        return 1;
    }
}

GradientCheckResult run_gradient_check(const RnnTopology& topology, int horizon_T,
                                       int count_N, double h, double kink_margin,
                                       std::uint64_t base_seed, bool corrupt) {
    const LinearGaussianModel model = LinearGaussianModel::scalar(0.9, 1.0, 4.0);
    if (topology.input_dim() != 1 || topology.output_dim() != 1)
        throw DimensionError("run_gradient_check expects a scalar-in/scalar-out topology");

    GradientCheckResult result;
    for (std::uint64_t attempt = 0;; ++attempt) {
        const std::uint64_t seed = base_seed + attempt;
        const TrajectoryBatch batch =
            sample_trajectories(model, horizon_T, count_N, derive_seed(seed, "data"));
        RnnParams params = init_random_params(topology, derive_seed(seed, "params"));
        // bias offset pushes pre-activations off the kink
        for (auto& b : params.biases) b.array() += 0.05;

        double min_abs_pre = std::numeric_limits<double>::infinity();
        for (int n = 0; n < batch.count(); ++n) {
            std::vector<Eigen::VectorXd> prev = params.init_hidden;
            for (int t = 0; t < horizon_T; ++t) {
                const StepTrace trace = rnn_forward_traced(
                    topology, params, prev,
                    batch.observations[static_cast<std::size_t>(n)].col(t));
                for (const auto& pre : trace.pre)
                    min_abs_pre = std::min(min_abs_pre, pre.cwiseAbs().minCoeff());
                prev.clear();
                for (int k : topology.feedback_sources())
                    prev.push_back(trace.act[static_cast<std::size_t>(k)]);
            }
        }
        if (min_abs_pre <= kink_margin) continue; // too close to a kink; next seed

        GradientBundle bptt = grad_bptt(topology, params, batch);
        const GradientBundle fd = finite_diff_grad(topology, params, batch, {}, h);
        Eigen::VectorXd gb = flatten_params(topology, bptt.grad);
        const Eigen::VectorXd gf = flatten_params(topology, fd.grad);
        if (corrupt && gb.size() > 0) gb[0] += 1e-3;

        result.seed_used = seed;
        result.min_abs_preactivation = min_abs_pre;
        result.entries = static_cast<int>(gb.size());
        result.max_rel_error = 0.0;
        for (Eigen::Index i = 0; i < gb.size(); ++i) {
            const double rel = std::abs(gb[i] - gf[i]) / std::max(1.0, std::abs(gf[i]));
            result.max_rel_error = std::max(result.max_rel_error, rel);
        }
        return result;
    }
}

std::vector<CheckOutcome> verify_suite(bool corrupt_gradient) {
    std::vector<CheckOutcome> outcomes;

    { // BPTT against the central-difference oracle
        const RnnTopology topology(RnnVariant::Recursive, {1, 4, 4, 1});
        const GradientCheckResult r =
            run_gradient_check(topology, 5, 2, 1e-5, 1e-3, 1701, corrupt_gradient);
        CheckOutcome c{"gradient-bptt-vs-fd", r.max_rel_error <= 1e-5,
                       "max rel error " + detail::format_double(r.max_rel_error) + " over " +
                           std::to_string(r.entries) + " entries"};
        outcomes.push_back(std::move(c));
    }

    { // Riccati fixed point against the scalar quadratic-formula root
        double worst = 0.0;
        for (const double r : {1.0, 4.0}) {
            const double alpha = 0.98, q = 1.0;
            const LinearGaussianModel model = LinearGaussianModel::scalar(alpha, std::sqrt(r), 25.0);
            const double a2 = alpha * alpha;
            const double b = q + r * (1.0 - a2);
            const double root = (-b + std::sqrt(b * b + 4.0 * a2 * q * r)) / (2.0 * a2);
            const Eigen::MatrixXd fixed = riccati_fixed_point(model, 1e-14, 10000);
            worst = std::max(worst, std::abs(fixed(0, 0) - root));
        }
        outcomes.push_back({"riccati-closed-form", worst <= 1e-10,
                            "max |C_inf - root| " + detail::format_double(worst)});
    }

    { // memorization construction exactness
        const int T = 10, dy = 2;
        const double b = 50.0;
        Eigen::VectorXd rho0(2);
        rho0 << 0.3, -0.4;
        const MemorizationNet net = construct_memorization_params(T, dy, rho0, b);
        RngStream rng(99, 0);
        double worst = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            Eigen::MatrixXd obs(dy, T);
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < dy; ++i) obs(i, t) = rng.normal();
            const UnrollResult run = rnn_unroll(net.topology, net.params, obs);
            for (int t = 1; t <= T; ++t) {
                Eigen::VectorXd expected = Eigen::VectorXd::Zero(net.state_dim());
                expected[0] = t;
                expected.segment(1, rho0.size()) = rho0;
                for (int back = 0; back < t; ++back)
                    expected.segment(net.obs_block_offset(back), dy) = obs.col(t - 1 - back);
                worst = std::max(worst,
                                 (run.outputs.col(t - 1) - expected).cwiseAbs().maxCoeff());
            }
        }
        outcomes.push_back({"memorization-exactness", worst <= 1e-12,
                            "max |state - target| " + detail::format_double(worst)});
    }

    { // systematic resampling unbiasedness
        Eigen::VectorXd weights(8);
        weights << 0.15, 0.14, 0.13, 0.125, 0.12, 0.115, 0.11, 0.11;
        const int draws = 10000;
        RngStream rng(7, 0);
        Eigen::VectorXd mean_counts = Eigen::VectorXd::Zero(weights.size());
        for (int d = 0; d < draws; ++d) {
            const auto counts = systematic_resample_counts(weights, rng.uniform());
            for (Eigen::Index i = 0; i < weights.size(); ++i)
                mean_counts[i] += counts[static_cast<std::size_t>(i)];
        }
        mean_counts /= draws;
        double worst_rel = 0.0;
        for (Eigen::Index i = 0; i < weights.size(); ++i) {
            const double expected = weights[i] * static_cast<double>(weights.size());
            worst_rel = std::max(worst_rel, std::abs(mean_counts[i] - expected) / expected);
        }
        outcomes.push_back({"resampling-unbiasedness", worst_rel <= 0.02,
                            "max relative deviation " + detail::format_double(worst_rel)});
    }

    return outcomes;
}

int verify_suite_cli(std::ostream& out, bool corrupt_gradient) {
    const auto outcomes = verify_suite(corrupt_gradient);
    bool all = true;
    for (const auto& c : outcomes) {
        out << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << " — " << c.detail << "\n";
        all &= c.passed;
    }
    return all ? 0 : 1;
}

void export_fixtures(const std::filesystem::path& directory) {
    std::filesystem::create_directories(directory);
    const LinearGaussianModel model = LinearGaussianModel::scalar(0.98, 2.0, 25.0);
    const TrajectoryBatch batch = sample_trajectories(model, 20, 5, 424242);
    {
        std::ofstream out(directory / "trajectories.csv", std::ios::binary);
        write_batch_csv(out, batch);
    }
    {
        const auto states = kalman_filter(model, batch.observations[0]);
        std::ofstream out(directory / "kalman_trace.csv", std::ios::binary);
        write_filter_trace_csv(out, states);
    }
}

} // namespace rnnfilter
