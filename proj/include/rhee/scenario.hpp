#pragma once

// Scenario configuration, orchestration (coverage, localization, search,
// Monte Carlo) and run-report emission.

#include "rhee/controller.hpp"
#include "rhee/dynamics.hpp"
#include "rhee/estimation.hpp"
#include "rhee/fourier.hpp"
#include "rhee/information.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rhee {

struct OcclusionSpec {
    std::string shape;  // "circle" or "rectangle"
    Eigen::VectorXd center;
    double radius = 0.0;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
};

struct PhiSpec {
    std::string source = "uniform";  // uniform | occlusion | gaussian | grid | eid
    std::string grid_file;
    std::vector<int> cells{100, 100};
    std::vector<OcclusionSpec> occlusions;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

struct SystemSpec {
    std::string type = "double_integrator";  // double_integrator | quadrotor
    double u_bound = 50.0;
    bool elastic_walls = true;
    /// Double integrator only: nominal law -damping * velocity.
    double damping = 0.0;
    double height = 1.0;
    QuadrotorParams quadrotor;
    PdGains height_gains;
    bool attitude_hold = true;
    AttitudeGains attitude_gains;
};

struct TargetSpec {
    int id = 0;
    std::string motion = "static";  // static | waypoints | diffusion
    Eigen::VectorXd position;
    std::vector<double> times;
    std::vector<Eigen::VectorXd> points;
    double sigma = 0.0;
    double dt = 0.1;
    double appear_time = 0.0;
    std::uint64_t seed = 0;
    /// Optional initial belief mean; the target then starts as detected.
    Eigen::VectorXd prior_mean;
    double prior_sigma = 0.1;
};

struct RandomTargetSpec {
    int count = 0;
    double margin = 0.1;
};

struct SensorSpec {
    bool enabled = false;
    std::string model = "bearing_2d";  // bearing_2d | bearing_3d
    double range = 0.2;
    double frequency = 20.0;
    std::vector<double> noise{0.1};
    double sigma_init = 0.1;
    std::vector<double> process_noise;
    double height = 1.0;  // sensor height for bearing_3d on a planar agent
};

struct EidSpec {
    std::vector<int> cells{30, 30};
    double frequency = 1.0;
    double exploration_floor = 0.5;
    int belief_cells = 7;
    double belief_extent = 3.0;
    bool range_gated = true;
    /// Floor drops to zero once this many targets are detected (-1: never,
    /// 0: number of configured targets).
    int drop_floor_after = -1;
};

struct AgentSpec {
    int count = 1;
    std::vector<Eigen::VectorXd> initial_states;
    double start_margin = 0.1;
    bool normalized_average = false;
    bool parallel = false;
    std::string transport = "memory";  // memory | udp
};

struct RunSpec {
    double t0 = 0.0;
    double tf = 60.0;
    std::uint64_t seed = 1;
    int trials = 20;
    double localization_threshold = 0.05;
    double localization_hold = 0.0;
    std::string scenario = "coverage";  // coverage | localize | search
};

struct OutputSpec {
    bool steps = true;
    bool beliefs = true;
    bool ergodicity = true;
    bool grids = true;
    bool wall_clock = false;
    std::vector<int> statistics_cells{50, 50};
};

struct ScenarioConfig {
    std::string name = "scenario";
    std::vector<double> bounds{1.0, 1.0};
    SystemSpec system;
    ControllerConfig controller;
    PhiSpec phi;
    std::vector<TargetSpec> targets;
    RandomTargetSpec random_targets;
    SensorSpec sensor;
    EidSpec eid;
    AgentSpec agents;
    RunSpec run;
    OutputSpec outputs;
    /// The document the config was parsed from.
    nlohmann::json source;
};

/// Strict parse: unknown keys, wrong types and inconsistent fields throw ConfigError.
ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::filesystem::path& path);
/// Cross-field checks for running `scenario`. Throws ConfigError.
void validate_for(const ScenarioConfig& cfg, const std::string& scenario);

// --- building blocks ------------------------------------------------------------

ControlAffineSystem make_system(const ScenarioConfig& cfg);
NominalControl make_nominal(const ScenarioConfig& cfg);
MeasurementModel make_measurement_model(const SensorSpec& sensor);
/// Density on the configured grid for the static phi sources.
SpatialGrid make_static_density(const ScenarioConfig& cfg);
/// Unit density with the occluded cells zeroed.
SpatialGrid occlusion_density(const SearchDomain& domain, const std::vector<int>& cells,
                              const std::vector<OcclusionSpec>& occlusions);
std::vector<TargetTruth> make_targets(const ScenarioConfig& cfg, std::uint64_t seed);
/// Beliefs aligned with make_targets: configured priors, otherwise undetected.
std::vector<TargetBelief> make_initial_beliefs(const ScenarioConfig& cfg, const std::vector<TargetTruth>& truths);
std::vector<Eigen::VectorXd> make_initial_states(const ScenarioConfig& cfg, std::uint64_t seed);
/// Sensor position for an agent state: explored coordinates, plus height for 3-D bearings.
Eigen::VectorXd sensor_position(const ScenarioConfig& cfg, const Eigen::VectorXd& state);

/// Independent stream derived from (seed, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// --- reports ----------------------------------------------------------------------

struct AgentLog {
    std::vector<StepResult> steps;
    std::vector<std::pair<double, double>> metric_series;
    StateTrajectory trajectory;
};

struct BeliefRow {
    double time = 0.0;
    int id = 0;
    bool detected = false;
    Eigen::VectorXd mean;
    Eigen::VectorXd covariance_diagonal;
    double error = 0.0;
    bool localized = false;
};

struct TargetOutcome {
    int id = 0;
    Eigen::VectorXd truth;  // at the end of the run
    std::optional<double> detection_time;
    std::optional<double> first_measurement_time;
    std::optional<double> localization_time;
    double final_error = 0.0;
};

struct RunReport {
    std::string scenario;
    std::uint64_t seed = 0;
    nlohmann::json config_echo;
    std::vector<AgentLog> agents;
    std::vector<std::pair<double, double>> collective_series;
    std::vector<BeliefRow> beliefs;
    std::vector<TargetOutcome> targets;
    std::optional<double> floor_drop_time;
    int filter_skips = 0;
    std::uint64_t measurements = 0;
    double simulated_time = 0.0;
    double wall_time = 0.0;
    std::optional<SpatialGrid> density;
    std::optional<SpatialGrid> statistics;

    double real_time_factor() const { return wall_time > 0.0 ? simulated_time / wall_time : 0.0; }
    /// Targets present at some point but never detected.
    std::vector<int> undetected_targets() const;
    nlohmann::json summary(bool include_wall_clock) const;
};

RunReport run_coverage(const ScenarioConfig& cfg);
RunReport run_localization(const ScenarioConfig& cfg);
RunReport run_search_and_localize(const ScenarioConfig& cfg);
/// Dispatches on cfg.run.scenario.
RunReport run_scenario(const ScenarioConfig& cfg);

struct TrialOutcome {
    int trial = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    std::vector<std::optional<double>> localization_times;  // per target, config order
    std::vector<std::optional<double>> detection_times;
    double wall_time = 0.0;
};

struct MonteCarloReport {
    std::vector<TrialOutcome> trials;
    /// Time by which the first (earliest) target is localized, per trial.
    std::vector<std::optional<double>> first_localized;
    /// Time by which every target is localized, per trial.
    std::vector<std::optional<double>> all_localized;

    /// Fraction of trials with the given time at or before `deadline`.
    static double success_rate(const std::vector<std::optional<double>>& times, double deadline);
    nlohmann::json summary(bool include_wall_clock) const;
};

/// Independent trials with seeds derived from seed_base; failures are recorded, not thrown.
MonteCarloReport run_monte_carlo(const ScenarioConfig& cfg, int trials, std::uint64_t seed_base);

/// Writes config.json, steps.csv, beliefs.csv, ergodicity.csv, summary.json and grid files.
void write_report(const RunReport& report, const OutputSpec& outputs, const std::filesystem::path& dir);
void write_monte_carlo(const MonteCarloReport& report, const nlohmann::json& config_echo, const OutputSpec& outputs,
                       const std::filesystem::path& dir);

}  // namespace rhee
