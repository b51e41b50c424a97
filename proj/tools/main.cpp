// Experiment runner CLI: run <config>, verify, export-fixtures <dir>.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "rnnfilter/experiment.hpp"

int main(int argc, char** argv) {
    CLI::App app{"RNN filter-approximation experiments: train recurrent state "
                 "estimators on simulated linear-Gaussian data and score them "
                 "against the exact Kalman filter"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "run the train/evaluate pipeline from a config");
    run->add_option("config", config_path, "experiment config (JSON)")->required();

    bool corrupt_gradient = false;
    auto* verify = app.add_subcommand("verify", "run the fast oracle battery");
    verify
        ->add_flag("--corrupt-gradient", corrupt_gradient,
                   "mutation probe: perturb one gradient entry so the check must fail")
        ->group(""); // hidden from normal help

    std::string fixtures_dir;
    auto* fixtures = app.add_subcommand(
        "export-fixtures", "write trajectory and Kalman-trace CSV fixtures");
    fixtures->add_option("dir", fixtures_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            return rnnfilter::run_experiment_cli(config_path, std::cout, std::cerr);
        }
        if (verify->parsed()) {
            return rnnfilter::verify_suite_cli(std::cout, corrupt_gradient);
        }
        rnnfilter::export_fixtures(fixtures_dir);
        std::cout << "fixtures written to " << fixtures_dir << "\n";
        return 0;
    } catch (const rnnfilter::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
