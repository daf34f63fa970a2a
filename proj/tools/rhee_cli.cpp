#include "rhee/errors.hpp"
#include "rhee/scenario.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "run";
    bool quiet = false;
    std::optional<int> trials;
};

void print_targets(const rhee::RunReport& r) {
    for (const auto& t : r.targets) {
        std::cout << "  target " << t.id << ": detected "
                  << (t.detection_time ? std::to_string(*t.detection_time) : std::string("never")) << ", localized "
                  << (t.localization_time ? std::to_string(*t.localization_time) : std::string("never")) << ", final error "
                  << t.final_error << '\n';
    }
}

int run(const std::string& command, const Options& opt) {
    rhee::ScenarioConfig cfg = rhee::load_config(opt.config);
    if (opt.seed) cfg.run.seed = *opt.seed;

    if (command == "validate-config") {
        rhee::validate_for(cfg, cfg.run.scenario);
        if (!opt.quiet) std::cout << opt.config << ": ok (" << cfg.run.scenario << ")\n";
        return 0;
    }
    if (command == "montecarlo") {
        rhee::validate_for(cfg, cfg.run.scenario);
        const int trials = opt.trials.value_or(cfg.run.trials);
        auto report = rhee::run_monte_carlo(cfg, trials, cfg.run.seed);
        nlohmann::json echo = cfg.source;
        echo["run"]["seed"] = cfg.run.seed;
        echo["run"]["trials"] = trials;
        rhee::write_monte_carlo(report, echo, cfg.outputs, opt.out_dir);
        if (!opt.quiet) {
            std::cout << trials << " trials\n";
            for (double deadline : {20.0, 40.0, 60.0, 100.0})
                std::cout << "  by " << deadline << " s: first "
                          << rhee::MonteCarloReport::success_rate(report.first_localized, deadline) << ", all "
                          << rhee::MonteCarloReport::success_rate(report.all_localized, deadline) << '\n';
        }
        return 0;
    }

    rhee::ScenarioConfig run_cfg = cfg;
    run_cfg.run.scenario = command == "coverage" ? "coverage" : command == "localize" ? "localize" : "search";
    rhee::validate_for(run_cfg, run_cfg.run.scenario);
    rhee::RunReport report = rhee::run_scenario(run_cfg);
    rhee::write_report(report, run_cfg.outputs, opt.out_dir);
    if (!opt.quiet) {
        std::cout << report.scenario << ": " << report.simulated_time << " s simulated in " << report.wall_time << " s wall ("
                  << report.real_time_factor() << "x real time)\n";
        for (std::size_t a = 0; a < report.agents.size(); ++a)
            if (!report.agents[a].metric_series.empty())
                std::cout << "  agent " << a << " final ergodicity " << report.agents[a].metric_series.back().second << '\n';
        if (!report.collective_series.empty())
            std::cout << "  collective ergodicity " << report.collective_series.back().second << '\n';
        print_targets(report);
        std::cout << "  outputs in " << opt.out_dir << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Receding-horizon ergodic exploration scenarios"};
    app.require_subcommand(1);
    Options opt;
    std::string chosen;
    for (const char* name : {"coverage", "localize", "search", "montecarlo", "validate-config"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", opt.config, "scenario JSON")->required();
        sub->add_option("--seed", opt.seed, "override run.seed");
        sub->add_option("--out-dir", opt.out_dir, "run directory");
        sub->add_flag("--quiet", opt.quiet, "no console summary");
        if (std::string(name) == "montecarlo") sub->add_option("--trials", opt.trials, "override run.trials");
        sub->callback([&chosen, name] { chosen = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    try {
        return run(chosen, opt);
    } catch (const rhee::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "run error: " << e.what() << '\n';
        return 1;
    }
}
