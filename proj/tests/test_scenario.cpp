#include "doctest.h"
#include "support.hpp"

#include "rhee/errors.hpp"
#include "rhee/scenario.hpp"

#include <fstream>
#include <sstream>

using namespace rhee;
using nlohmann::json;

namespace {

json coverage_doc() {
    return json::parse(R"({
      "name": "tiny",
      "domain": {"bounds": [1.0, 1.0]},
      "system": {"type": "double_integrator"},
      "controller": {"K": 4, "horizon": 0.1, "sample_time": 0.02, "dt": 0.002},
      "phi": {"source": "uniform", "cells": [20, 20]},
      "agents": {"initial_states": [[0.3, 0.0, 0.4, 0.0]]},
      "run": {"tf": 0.4, "scenario": "coverage"},
      "outputs": {"statistics_cells": [10, 10]}
    })");
}

json localize_doc() {
    return json::parse(R"({
      "name": "tiny localize",
      "domain": {"bounds": [1.0, 1.0]},
      "controller": {"K": 4, "horizon": 0.1, "sample_time": 0.02, "dt": 0.002},
      "phi": {"source": "eid"},
      "targets": [{"id": 1, "position": [0.5, 0.45], "prior_mean": [0.45, 0.5], "prior_sigma": 0.05}],
      "sensor": {"enabled": true, "model": "bearing_2d", "range": 0.2},
      "eid": {"cells": [10, 10], "exploration_floor": 0.2},
      "agents": {"initial_states": [[0.5, 0.0, 0.5, 0.0]]},
      "run": {"tf": 0.5, "scenario": "localize", "seed": 4}
    })");
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("configuration parsing is strict") {
    CHECK_NOTHROW(parse_config(coverage_doc()));

    auto doc = coverage_doc();
    doc["colour"] = "blue";
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = coverage_doc();
    doc["controller"]["horizn"] = 0.2;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = coverage_doc();
    doc["controller"]["K"] = "ten";
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = coverage_doc();
    doc["system"]["type"] = "boat";
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = coverage_doc();
    doc["agents"]["initial_states"] = json::array({json::array({0.3, 0.0})});
    CHECK_THROWS_AS(validate_for(parse_config(doc), "coverage"), ConfigError);

    doc = coverage_doc();
    doc["system"]["damping"] = -0.5;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);
    doc["system"]["damping"] = 2.0;
    const ScenarioConfig damped = parse_config(doc);
    CHECK(make_nominal(damped)(0.0, Eigen::Vector4d(0.5, 1.0, 0.5, 0.0))[0] == doctest::Approx(-2.0));

    doc = localize_doc();
    doc["targets"][0]["wobble"] = 1;
    CHECK_THROWS_AS(parse_config(doc), ConfigError);

    doc = localize_doc();
    doc["sensor"]["enabled"] = false;
    CHECK_THROWS_AS(validate_for(parse_config(doc), "localize"), ConfigError);
}

TEST_CASE("shipped configurations validate") {
    int count = 0;
    for (const auto& entry : std::filesystem::directory_iterator(RHEE_CONFIG_DIR)) {
        if (entry.path().extension() != ".json") continue;
        INFO(entry.path().string());
        const ScenarioConfig cfg = load_config(entry.path());
        CHECK_NOTHROW(validate_for(cfg, cfg.run.scenario));
        ++count;
    }
    CHECK(count >= 5);
}

TEST_CASE("a zero-length run produces an empty report") {
    auto doc = coverage_doc();
    doc["run"]["tf"] = 0.0;
    const RunReport report = run_scenario(parse_config(doc));
    CHECK(report.simulated_time == 0.0);
    for (const auto& a : report.agents) CHECK(a.steps.empty());
    CHECK(report.measurements == 0);
}

TEST_CASE("coverage runs are reproducible down to the written traces") {
    const ScenarioConfig cfg = parse_config(coverage_doc());
    const auto a = testing::scratch_dir("repro_a");
    const auto b = testing::scratch_dir("repro_b");
    const RunReport ra = run_scenario(cfg);
    write_report(ra, cfg.outputs, a);
    write_report(run_scenario(cfg), cfg.outputs, b);
    CHECK(ra.agents[0].steps.size() == 20);
    CHECK(ra.simulated_time == doctest::Approx(0.4));
    for (const char* name : {"steps.csv", "ergodicity.csv", "summary.json", "config.json"}) {
        INFO(name);
        REQUIRE(std::filesystem::exists(a / name));
        CHECK(slurp(a / name) == slurp(b / name));
    }
    CHECK(std::filesystem::exists(a / "density.grid"));
    const std::string steps = slurp(a / "steps.csv");
    CHECK(steps.rfind("agent,step,time,", 0) == 0);
    CHECK(steps.find("wall_us") == std::string::npos);
}

TEST_CASE("localization run starts from the configured prior and writes beliefs") {
    const ScenarioConfig cfg = parse_config(localize_doc());
    const RunReport report = run_scenario(cfg);
    REQUIRE(report.targets.size() == 1);
    CHECK(report.measurements > 0);
    CHECK(report.targets[0].first_measurement_time.has_value());
    CHECK(report.undetected_targets().empty());
    const auto dir = testing::scratch_dir("localize");
    write_report(report, cfg.outputs, dir);
    CHECK(slurp(dir / "beliefs.csv").find("time,id,detected") == 0);
    const json summary = json::parse(slurp(dir / "summary.json"));
    CHECK(summary.contains("targets"));
}

TEST_CASE("search with no targets keeps a uniform density") {
    auto doc = localize_doc();
    doc["targets"] = json::array();
    doc["run"]["scenario"] = "search";
    const ScenarioConfig cfg = parse_config(doc);
    validate_for(cfg, "search");
    const RunReport report = run_scenario(cfg);
    CHECK(report.targets.empty());
    CHECK(report.measurements == 0);
    REQUIRE(report.density.has_value());
    CHECK(report.density->values().maxCoeff() == doctest::Approx(report.density->values().minCoeff()));
}

TEST_CASE("Monte Carlo with one trial uses the base seed") {
    auto doc = localize_doc();
    doc["run"]["tf"] = 0.2;
    const ScenarioConfig cfg = parse_config(doc);
    const MonteCarloReport mc = run_monte_carlo(cfg, 1, 77);
    REQUIRE(mc.trials.size() == 1);
    CHECK(mc.trials[0].seed == 77);
    CHECK_FALSE(mc.trials[0].failed);
    CHECK(MonteCarloReport::success_rate({1.0, std::nullopt, 3.0, 5.0}, 3.0) == doctest::Approx(0.5));
    const auto dir = testing::scratch_dir("mc");
    write_monte_carlo(mc, cfg.source, cfg.outputs, dir);
    CHECK(std::filesystem::exists(dir / "trials.csv"));
}

TEST_CASE("occluded cells are zeroed") {
    const SearchDomain domain({1.0, 1.0});
    OcclusionSpec circle{"circle", Eigen::Vector2d(0.3, 0.7), 0.1, {}, {}};
    OcclusionSpec rect{"rectangle", {}, 0.0, Eigen::Vector2d(0.6, 0.2), Eigen::Vector2d(0.8, 0.4)};
    const SpatialGrid g = occlusion_density(domain, {50, 50}, {circle, rect});
    CHECK(g.is_normalized());
    const double open = g.values()[static_cast<Eigen::Index>(g.locate(Eigen::Vector2d(0.1, 0.1)))];
    CHECK(open > 0.0);
    for (std::size_t c = 0; c < g.size(); ++c) {
        const Eigen::VectorXd s = g.cell_center(c);
        const bool in_circle = (s - circle.center).norm() < 0.1;
        const bool in_rect = s[0] > 0.6 && s[0] < 0.8 && s[1] > 0.2 && s[1] < 0.4;
        const double v = g.values()[static_cast<Eigen::Index>(c)];
        if (in_circle || in_rect) CHECK(v == 0.0);
        if ((s - circle.center).norm() > 0.12 && !(s[0] > 0.58 && s[0] < 0.82 && s[1] > 0.18 && s[1] < 0.42)) {
            CHECK(v == doctest::Approx(open));
        }
    }
}

TEST_CASE("seed streams are deterministic and distinct") {
    CHECK(derive_seed(5, 1) == derive_seed(5, 1));
    CHECK(derive_seed(5, 1) != derive_seed(5, 2));
    CHECK(derive_seed(5, 1) != derive_seed(6, 1));

    auto doc = localize_doc();
    doc["agents"] = json::parse(R"({"count": 4, "start_margin": 0.2})");
    doc["targets"] = json::array();
    doc["random_targets"] = json::parse(R"({"count": 3, "margin": 0.15})");
    const ScenarioConfig cfg = parse_config(doc);
    const auto states = make_initial_states(cfg, 9);
    REQUIRE(states.size() == 4);
    for (const auto& x : states) {
        CHECK(x[0] >= 0.2);
        CHECK(x[0] <= 0.8);
        CHECK(x[1] == 0.0);
    }
    const auto targets = make_targets(cfg, 9);
    REQUIRE(targets.size() == 3);
    for (const auto& t : targets) CHECK(t.position(0.0).minCoeff() >= 0.15);
    CHECK(make_targets(cfg, 9)[1].position(0.0) == targets[1].position(0.0));
    CHECK(make_targets(cfg, 10)[1].position(0.0) != targets[1].position(0.0));
}
