#include "rhee/scenario.hpp"

#include "rhee/errors.hpp"
#include "rhee/grid_io.hpp"
#include "rhee/multi_agent.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <thread>

namespace rhee {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kClockEps = 1e-9;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

TrajectorySegment explored_segment(const ControlAffineSystem& sys, const StateTrajectory& traj) {
    TrajectorySegment seg;
    seg.times = traj.times;
    seg.points.resize(sys.ergodic_dims(), traj.states.cols());
    for (Eigen::Index j = 0; j < traj.states.cols(); ++j) seg.points.col(j) = sys.project(traj.states.col(j));
    return seg;
}

void append_samples(StateTrajectory& into, const StateTrajectory& applied) {
    const std::size_t skip = into.samples() == 0 ? 0 : 1;
    const auto old_cols = static_cast<Eigen::Index>(into.samples());
    const auto add = static_cast<Eigen::Index>(applied.samples() - skip);
    into.states.conservativeResize(applied.states.rows(), old_cols + add);
    into.controls.conservativeResize(applied.controls.rows(), old_cols + add);
    if (old_cols > 0) into.controls.col(old_cols - 1) = applied.controls.col(0);
    for (Eigen::Index j = 0; j < add; ++j) {
        const auto src = j + static_cast<Eigen::Index>(skip);
        into.times.push_back(applied.times[static_cast<std::size_t>(src)]);
        into.states.col(old_cols + j) = applied.states.col(src);
        into.controls.col(old_cols + j) = applied.controls.col(src);
    }
}

/// Mean of the agents' trajectory coefficients over [t0, tf], reconstructed on a grid.
SpatialGrid realized_statistics(const std::vector<AgentLog>& agents, const ControlAffineSystem& sys, const FourierBasis& basis,
                                double t0, double tf, const std::vector<int>& cells) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
    int used = 0;
    for (const auto& a : agents) {
        if (a.trajectory.samples() < 2) continue;
        mean += trajectory_coeffs(explored_segment(sys, a.trajectory), basis, t0, tf).values;
        ++used;
    }
    if (used > 0) mean /= used;
    return reconstruct_statistics(CoefficientVector(mean), basis, cells);
}

std::int64_t step_count(double t0, double tf, double ts) {
    return static_cast<std::int64_t>(std::llround((tf - t0) / ts));
}

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json echo_with_seed(const ScenarioConfig& cfg, std::uint64_t seed) {
    nlohmann::json echo = cfg.source.is_object() ? cfg.source : nlohmann::json::object();
    echo["run"]["seed"] = seed;
    return echo;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

ControlAffineSystem make_system(const ScenarioConfig& cfg) {
    if (cfg.system.type == "quadrotor") return make_quadrotor12(cfg.system.quadrotor, cfg.system.elastic_walls);
    return make_double_integrator(cfg.system.u_bound, cfg.system.elastic_walls);
}

NominalControl make_nominal(const ScenarioConfig& cfg) {
    const auto& sys = cfg.system;
    if (sys.type == "quadrotor") {
        if (sys.attitude_hold) return make_stabilized_hover(sys.quadrotor, sys.height, sys.height_gains, sys.attitude_gains);
        return make_pd_height_hold(sys.quadrotor, sys.height, sys.height_gains);
    }
    if (sys.damping > 0.0) return make_velocity_damping(sys.damping);
    return make_zero_nominal(2);
}

MeasurementModel make_measurement_model(const SensorSpec& sensor) {
    if (sensor.model == "bearing_3d") {
        if (sensor.noise.size() != 2) throw UsageError("bearing_3d needs two noise variances");
        return bearing_model_3d(Eigen::Vector2d(sensor.noise[0], sensor.noise[1]).asDiagonal());
    }
    if (sensor.noise.size() != 1) throw UsageError("bearing_2d needs one noise variance");
    return bearing_model_2d(sensor.noise[0]);
}

SpatialGrid occlusion_density(const SearchDomain& domain, const std::vector<int>& cells,
                              const std::vector<OcclusionSpec>& occlusions) {
    SpatialGrid grid(domain, cells);
    grid.values().setOnes();
    for (std::size_t c = 0; c < grid.size(); ++c) {
        Eigen::VectorXd s = grid.cell_center(c);
        for (const auto& o : occlusions) {
            bool inside = false;
            if (o.shape == "circle") {
                if (o.center.size() != s.size()) throw UsageError("occlusion center dimension mismatch");
                inside = (s - o.center).norm() < o.radius;
            } else {
                if (o.lower.size() != s.size() || o.upper.size() != s.size()) throw UsageError("occlusion corner dimension mismatch");
                inside = (s.array() > o.lower.array()).all() && (s.array() < o.upper.array()).all();
            }
            if (inside) grid.values()[static_cast<Eigen::Index>(c)] = 0.0;
        }
    }
    grid.normalize();
    return grid;
}

SpatialGrid make_static_density(const ScenarioConfig& cfg) {
    SearchDomain domain(cfg.bounds);
    const auto& phi = cfg.phi;
    if (phi.source == "grid") {
        SpatialGrid g = load_grid(phi.grid_file);
        if (!(g.domain() == domain)) throw ConfigError("phi grid file domain does not match domain.bounds");
        g.normalize();
        return g;
    }
    if (phi.source == "occlusion") return occlusion_density(domain, phi.cells, phi.occlusions);
    SpatialGrid g(domain, phi.cells);
    if (phi.source == "gaussian") {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(phi.covariance);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw ConfigError("phi.covariance must be positive definite");
        for (std::size_t c = 0; c < g.size(); ++c) {
            Eigen::VectorXd d = g.cell_center(c) - phi.mean;
            g.values()[static_cast<Eigen::Index>(c)] = std::exp(-0.5 * d.dot(ldlt.solve(d)));
        }
    } else {
        g.values().setOnes();
    }
    g.normalize();
    return g;
}

std::vector<TargetTruth> make_targets(const ScenarioConfig& cfg, std::uint64_t seed) {
    std::vector<TargetTruth> truths;
    int next_id = 0;
    for (const auto& t : cfg.targets) {
        if (t.motion == "static") {
            truths.push_back(static_target(t.id, t.position, t.appear_time));
        } else if (t.motion == "waypoints") {
            Eigen::MatrixXd pts(t.points.front().size(), static_cast<Eigen::Index>(t.points.size()));
            for (std::size_t j = 0; j < t.points.size(); ++j) pts.col(static_cast<Eigen::Index>(j)) = t.points[j];
            truths.push_back(waypoint_target(t.id, t.times, pts, t.appear_time));
        } else {
            const std::uint64_t s = t.seed != 0 ? t.seed : derive_seed(seed, 1000 + static_cast<std::uint64_t>(t.id));
            truths.push_back(diffusion_target(t.id, t.position, t.sigma, t.dt, cfg.run.t0, cfg.run.tf, cfg.bounds, s, t.appear_time));
        }
        next_id = std::max(next_id, t.id + 1);
    }
    std::mt19937_64 rng(derive_seed(seed, 1));
    const int params = cfg.sensor.model == "bearing_3d" ? 3 : 2;
    for (int j = 0; j < cfg.random_targets.count; ++j) {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(params);
        for (int d = 0; d < 2; ++d) {
            const double lo = cfg.random_targets.margin;
            const double hi = cfg.bounds[static_cast<std::size_t>(d)] - cfg.random_targets.margin;
            p[d] = std::uniform_real_distribution<double>(lo, hi)(rng);
        }
        truths.push_back(static_target(next_id++, p));
    }
    return truths;
}

std::vector<TargetBelief> make_initial_beliefs(const ScenarioConfig& cfg, const std::vector<TargetTruth>& truths) {
    std::vector<TargetBelief> beliefs(truths.size());
    for (std::size_t j = 0; j < truths.size(); ++j) {
        beliefs[j].id = truths[j].id;
        if (j < cfg.targets.size() && cfg.targets[j].prior_mean.size() > 0) {
            const auto& t = cfg.targets[j];
            beliefs[j].mean = t.prior_mean;
            beliefs[j].covariance = Eigen::MatrixXd::Identity(t.prior_mean.size(), t.prior_mean.size()) * t.prior_sigma * t.prior_sigma;
            beliefs[j].detected = true;
        }
    }
    return beliefs;
}

std::vector<Eigen::VectorXd> make_initial_states(const ScenarioConfig& cfg, std::uint64_t seed) {
    if (!cfg.agents.initial_states.empty()) return cfg.agents.initial_states;
    std::mt19937_64 rng(derive_seed(seed, 2));
    const bool quad = cfg.system.type == "quadrotor";
    std::vector<Eigen::VectorXd> states;
    for (int a = 0; a < cfg.agents.count; ++a) {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(quad ? 12 : 4);
        for (int d = 0; d < 2; ++d) {
            const double lo = cfg.agents.start_margin;
            const double hi = cfg.bounds[static_cast<std::size_t>(d)] - cfg.agents.start_margin;
            const double p = std::uniform_real_distribution<double>(lo, hi)(rng);
            x[quad ? d : 2 * d] = p;
        }
        if (quad) x[2] = cfg.system.height;
        states.push_back(x);
    }
    return states;
}

Eigen::VectorXd sensor_position(const ScenarioConfig& cfg, const Eigen::VectorXd& state) {
    const bool quad = cfg.system.type == "quadrotor";
    const bool three_d = cfg.sensor.model == "bearing_3d";
    Eigen::VectorXd q(three_d ? 3 : 2);
    q[0] = state[0];
    q[1] = quad ? state[1] : state[2];
    if (three_d) q[2] = quad ? state[2] : cfg.sensor.height;
    return q;
}

std::vector<int> RunReport::undetected_targets() const {
    std::vector<int> out;
    for (const auto& t : targets)
        if (!t.detection_time && !t.first_measurement_time) out.push_back(t.id);
    return out;
}

nlohmann::json RunReport::summary(bool include_wall_clock) const {
    nlohmann::json s;
    s["scenario"] = scenario;
    s["seed"] = seed;
    s["simulated_time"] = simulated_time;
    nlohmann::json agent_list = nlohmann::json::array();
    for (std::size_t a = 0; a < agents.size(); ++a) {
        const auto& log = agents[a];
        int accepted = 0;
        std::map<std::string, int> fallbacks;
        for (const auto& st : log.steps) {
            if (st.fallback.empty()) {
                ++accepted;
            } else {
                ++fallbacks[st.fallback];
            }
        }
        nlohmann::json entry;
        entry["agent"] = a;
        entry["steps"] = log.steps.size();
        entry["accepted_actions"] = accepted;
        entry["fallbacks"] = fallbacks;
        entry["final_ergodicity"] = log.metric_series.empty() ? nlohmann::json(nullptr) : nlohmann::json(log.metric_series.back().second);
        if (include_wall_clock) {
            double total = 0.0;
            for (const auto& st : log.steps) total += st.wall_us;
            entry["mean_step_wall_us"] = log.steps.empty() ? 0.0 : total / static_cast<double>(log.steps.size());
        }
        agent_list.push_back(entry);
    }
    s["agents"] = agent_list;
    s["collective_final_ergodicity"] = collective_series.empty() ? nlohmann::json(nullptr) : nlohmann::json(collective_series.back().second);
    nlohmann::json target_list = nlohmann::json::array();
    for (const auto& t : targets) {
        nlohmann::json entry;
        entry["id"] = t.id;
        entry["truth"] = std::vector<double>(t.truth.data(), t.truth.data() + t.truth.size());
        entry["detection_time"] = optional_json(t.detection_time);
        entry["first_measurement_time"] = optional_json(t.first_measurement_time);
        entry["localization_time"] = optional_json(t.localization_time);
        entry["final_error"] = t.final_error;
        target_list.push_back(entry);
    }
    s["targets"] = target_list;
    s["undetected_targets"] = undetected_targets();
    s["floor_drop_time"] = optional_json(floor_drop_time);
    s["filter_skips"] = filter_skips;
    s["measurements"] = measurements;
    if (include_wall_clock) {
        s["wall_time"] = wall_time;
        s["real_time_factor"] = real_time_factor();
    }
    return s;
}

// --- coverage -------------------------------------------------------------------------

RunReport run_coverage(const ScenarioConfig& cfg) {
    validate_for(cfg, "coverage");
    RunReport report;
    report.scenario = "coverage";
    report.seed = cfg.run.seed;
    report.config_echo = echo_with_seed(cfg, cfg.run.seed);
    if (cfg.run.tf <= cfg.run.t0) return report;

    const SearchDomain domain(cfg.bounds);
    const FourierBasis basis(domain, cfg.controller.K);
    const SpatialGrid density = make_static_density(cfg);
    const CoefficientVector phi = distribution_coeffs(density, basis);
    const ControlAffineSystem sys = make_system(cfg);
    const NominalControl nominal = make_nominal(cfg);
    const auto states = make_initial_states(cfg, cfg.run.seed);

    const auto start = Clock::now();
    if (states.size() == 1) {
        ClosedLoopRun run = rhee_run(cfg.run.t0, states.front(), phi, cfg.run.t0, cfg.run.tf, sys, basis, cfg.controller, nominal);
        report.agents.push_back({std::move(run.steps), std::move(run.metric_series), std::move(run.trajectory)});
    } else {
        std::unique_ptr<UdpLoopbackTransport> udp;
        MultiAgentOptions options;
        options.normalized_average = cfg.agents.normalized_average;
        options.parallel = cfg.agents.parallel;
        if (cfg.agents.transport == "udp") {
            udp = std::make_unique<UdpLoopbackTransport>(static_cast<int>(states.size()));
            options.transport = udp.get();
        }
        MultiAgentRun run = run_multi_agent(cfg.run.t0, states, phi, cfg.run.tf, sys, basis, cfg.controller, nominal, options);
        for (auto& a : run.agents) report.agents.push_back({std::move(a.steps), std::move(a.metric_series), std::move(a.trajectory)});
        report.collective_series = std::move(run.collective_series);
    }
    report.wall_time = seconds_since(start);
    report.simulated_time = cfg.run.tf - cfg.run.t0;
    report.density = density;
    report.statistics = realized_statistics(report.agents, sys, basis, cfg.run.t0, cfg.run.tf, cfg.outputs.statistics_cells);
    return report;
}

// --- localization and search -------------------------------------------------------------

namespace {

struct LocalizationTracker {
    std::optional<double> streak_start;
    std::optional<double> localized_at;

    void observe(double t, bool localized, double hold) {
        if (!localized) {
            streak_start.reset();
            return;
        }
        if (!streak_start) streak_start = t;
        if (!localized_at && t - *streak_start >= hold - kClockEps) localized_at = *streak_start;
    }
};

RunReport run_estimation(const ScenarioConfig& cfg, bool search) {
    const std::string scenario = search ? "search" : "localize";
    validate_for(cfg, scenario);
    RunReport report;
    report.scenario = scenario;
    report.seed = cfg.run.seed;
    report.config_echo = echo_with_seed(cfg, cfg.run.seed);

    const auto truths = make_targets(cfg, cfg.run.seed);
    auto beliefs = make_initial_beliefs(cfg, truths);
    std::vector<std::mt19937_64> rngs;
    for (const auto& t : truths) rngs.emplace_back(derive_seed(cfg.run.seed, 100 + static_cast<std::uint64_t>(t.id)));
    report.targets.resize(truths.size());
    for (std::size_t j = 0; j < truths.size(); ++j) report.targets[j].id = truths[j].id;
    std::vector<LocalizationTracker> trackers(truths.size());

    auto finish_targets = [&](double t) {
        for (std::size_t j = 0; j < truths.size(); ++j) {
            report.targets[j].truth = truths[j].position(t);
            report.targets[j].localization_time = trackers[j].localized_at;
            report.targets[j].final_error =
                beliefs[j].detected ? (beliefs[j].mean - report.targets[j].truth).norm() : std::numeric_limits<double>::infinity();
        }
    };
    if (cfg.run.tf <= cfg.run.t0) {
        finish_targets(cfg.run.t0);
        return report;
    }

    const SearchDomain domain(cfg.bounds);
    const FourierBasis basis(domain, cfg.controller.K);
    const ControlAffineSystem sys = make_system(cfg);
    const NominalControl nominal = make_nominal(cfg);
    const MeasurementModel model = make_measurement_model(cfg.sensor);
    const auto initial = make_initial_states(cfg, cfg.run.seed);
    const int n = static_cast<int>(initial.size());
    const double ts = cfg.controller.sample_time;

    Eigen::MatrixXd process = Eigen::MatrixXd::Zero(model.params(), model.params());
    for (std::size_t d = 0; d < cfg.sensor.process_noise.size(); ++d)
        process(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) = cfg.sensor.process_noise[d];

    EidSettings eid;
    eid.cells = cfg.eid.cells;
    eid.exploration_floor = cfg.eid.exploration_floor;
    eid.belief_cells = cfg.eid.belief_cells;
    eid.belief_extent = cfg.eid.belief_extent;
    if (cfg.eid.range_gated) eid.sensor_range = cfg.sensor.range;
    int drop_after = cfg.eid.drop_floor_after;
    if (drop_after == 0 || (search && drop_after < 0)) drop_after = static_cast<int>(truths.size());
    const SensorPlacement placement = [&cfg](const Eigen::VectorXd& s) {
        if (cfg.sensor.model != "bearing_3d") return Eigen::VectorXd(s);
        Eigen::VectorXd q(3);
        q << s[0], s[1], cfg.system.type == "quadrotor" ? cfg.system.height : cfg.sensor.height;
        return q;
    };

    std::vector<ErgodicController> agents;
    std::vector<TrailBuffer> trails(static_cast<std::size_t>(n));
    std::vector<Eigen::VectorXd> states = initial;
    for (int a = 0; a < n; ++a) agents.emplace_back(sys, basis, cfg.controller, nominal);
    report.agents.resize(static_cast<std::size_t>(n));
    CoefficientHub hub(n);
    std::vector<Delivery> inbox(static_cast<std::size_t>(n));

    const auto start = Clock::now();
    const auto steps = step_count(cfg.run.t0, cfg.run.tf, ts);
    const double sense_period = 1.0 / cfg.sensor.frequency;
    const double phi_period = 1.0 / cfg.eid.frequency;
    double next_sense = cfg.run.t0;
    double next_phi = cfg.run.t0;
    std::int64_t sense_ticks = 0;
    std::int64_t phi_ticks = 0;
    bool started = false;
    std::optional<SpatialGrid> density;

    for (std::int64_t i = 0; i < steps; ++i) {
        const double t = cfg.run.t0 + static_cast<double>(i) * ts;

        if (t >= next_sense - kClockEps) {
            for (auto& b : beliefs)
                if (b.detected) b = ekf_predict(b, process);
            for (int a = 0; a < n; ++a) {
                const Eigen::VectorXd q = sensor_position(cfg, states[static_cast<std::size_t>(a)]);
                const SensingResult sensed = detect_and_measure(truths, beliefs, q, model, cfg.sensor.range, rngs, t, cfg.sensor.sigma_init);
                for (int id : sensed.new_detections) {
                    for (std::size_t j = 0; j < truths.size(); ++j)
                        if (truths[j].id == id && !report.targets[j].detection_time) report.targets[j].detection_time = t;
                }
                for (const auto& m : sensed.measurements) {
                    for (std::size_t j = 0; j < truths.size(); ++j) {
                        if (truths[j].id != m.target_id) continue;
                        if (!report.targets[j].first_measurement_time) report.targets[j].first_measurement_time = t;
                        const EkfUpdate up = ekf_update(beliefs[j], model, q, m.z);
                        if (up.skipped) ++report.filter_skips;
                        beliefs[j] = up.belief;
                        ++report.measurements;
                    }
                }
            }
            for (std::size_t j = 0; j < truths.size(); ++j) {
                const Eigen::VectorXd truth = truths[j].position(t);
                const bool localized = localization_status(beliefs[j], truth, cfg.run.localization_threshold);
                trackers[j].observe(t, localized, cfg.run.localization_hold);
                if (cfg.outputs.beliefs) {
                    BeliefRow row;
                    row.time = t;
                    row.id = truths[j].id;
                    row.detected = beliefs[j].detected;
                    row.mean = beliefs[j].detected ? beliefs[j].mean : Eigen::VectorXd::Constant(model.params(), std::nan(""));
                    row.covariance_diagonal = beliefs[j].detected ? Eigen::VectorXd(beliefs[j].covariance.diagonal())
                                                                  : Eigen::VectorXd::Constant(model.params(), std::nan(""));
                    row.error = beliefs[j].detected ? (beliefs[j].mean - truth).norm() : std::nan("");
                    row.localized = localized;
                    report.beliefs.push_back(std::move(row));
                }
            }
            next_sense = cfg.run.t0 + static_cast<double>(++sense_ticks) * sense_period;
        }

        if (t >= next_phi - kClockEps) {
            int detected = 0;
            for (const auto& b : beliefs) detected += b.detected ? 1 : 0;
            if (drop_after >= 0 && detected >= drop_after && drop_after > 0) {
                if (!report.floor_drop_time && eid.exploration_floor > 0.0) report.floor_drop_time = t;
                eid.exploration_floor = 0.0;
            }
            density = build_eid_grid(model, beliefs, placement, domain, eid);
            const CoefficientVector phi = distribution_coeffs(*density, basis);
            for (int a = 0; a < n; ++a) {
                const auto ua = static_cast<std::size_t>(a);
                if (!started) {
                    agents[ua].reset(t, states[ua], t, phi);
                } else {
                    restart_with_memory(agents[ua], t, states[ua], phi, trails[ua], cfg.controller.memory);
                }
            }
            started = true;
            next_phi = cfg.run.t0 + static_cast<double>(++phi_ticks) * phi_period;
        }

        std::vector<std::optional<CoefficientMessage>> outgoing(static_cast<std::size_t>(n));
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
        for (int a = 0; a < n; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            auto& ctl = agents[ua];
            if (n > 1 && inbox[ua].messages.size() == static_cast<std::size_t>(n - 1)) {
                std::vector<CoefficientVector> others;
                for (const auto& m : inbox[ua].messages) others.push_back(m.coefficients);
                ctl.set_blend(coefficient_blend(others, n, cfg.agents.normalized_average));
            }
            auto& log = report.agents[ua];
            log.steps.push_back(ctl.solve(ctl.time(), states[ua]));
            StateTrajectory applied;
            try {
                applied = ctl.apply(states[ua]);
            } catch (const IntegrationDiverged&) {
                log.steps.back().fallback = "closed loop diverged";
                throw;
            }
            contain_in_domain(ctl, applied);
            trails[ua].append(applied, sys);
            trails[ua].trim_before(ctl.time() - cfg.controller.memory - ts);
            append_samples(log.trajectory, applied);
            states[ua] = applied.final_state();
            log.metric_series.emplace_back(ctl.time(), ctl.realized_metric());
            mean += ctl.realized_coefficients().values;
            outgoing[ua] = CoefficientMessage{static_cast<std::uint32_t>(a), static_cast<std::uint64_t>(i), ctl.history().t0erg,
                                              ctl.time() - ts + cfg.controller.horizon, ctl.planned_coefficients()};
        }
        if (n > 1) {
            mean /= n;
            report.collective_series.emplace_back(agents.front().time(), ergodic_metric(CoefficientVector(mean), agents.front().phi(), basis));
            inbox = hub.exchange(outgoing);
        }
    }

    report.wall_time = seconds_since(start);
    report.simulated_time = static_cast<double>(steps) * ts;
    finish_targets(cfg.run.t0 + report.simulated_time);
    report.density = density;
    report.statistics = realized_statistics(report.agents, sys, basis, cfg.run.t0, cfg.run.t0 + report.simulated_time,
                                            cfg.outputs.statistics_cells);
    return report;
}

}  // namespace

RunReport run_localization(const ScenarioConfig& cfg) { return run_estimation(cfg, false); }

RunReport run_search_and_localize(const ScenarioConfig& cfg) { return run_estimation(cfg, true); }

RunReport run_scenario(const ScenarioConfig& cfg) {
    if (cfg.run.scenario == "localize") return run_localization(cfg);
    if (cfg.run.scenario == "search") return run_search_and_localize(cfg);
    return run_coverage(cfg);
}

// --- Monte Carlo --------------------------------------------------------------------------

double MonteCarloReport::success_rate(const std::vector<std::optional<double>>& times, double deadline) {
    if (times.empty()) return 0.0;
    const auto hits = std::count_if(times.begin(), times.end(), [deadline](const auto& t) { return t && *t <= deadline; });
    return static_cast<double>(hits) / static_cast<double>(times.size());
}

nlohmann::json MonteCarloReport::summary(bool include_wall_clock) const {
    nlohmann::json s;
    s["trials"] = trials.size();
    s["failed_trials"] = std::count_if(trials.begin(), trials.end(), [](const auto& t) { return t.failed; });
    double horizon = 0.0;
    for (const auto& t : first_localized)
        if (t) horizon = std::max(horizon, *t);
    for (const auto& t : all_localized)
        if (t) horizon = std::max(horizon, *t);
    nlohmann::json first = nlohmann::json::array();
    nlohmann::json all = nlohmann::json::array();
    const double bin = 10.0;
    for (double edge = bin; edge < horizon + bin; edge += bin) {
        first.push_back({{"deadline", edge}, {"rate", success_rate(first_localized, edge)}});
        all.push_back({{"deadline", edge}, {"rate", success_rate(all_localized, edge)}});
    }
    s["first_target_localized"] = first;
    s["all_targets_localized"] = all;
    nlohmann::json times = nlohmann::json::array();
    for (std::size_t k = 0; k < trials.size(); ++k)
        times.push_back({{"trial", trials[k].trial},
                         {"seed", trials[k].seed},
                         {"first", optional_json(first_localized[k])},
                         {"all", optional_json(all_localized[k])},
                         {"error", trials[k].error}});
    s["per_trial"] = times;
    if (include_wall_clock) {
        double total = 0.0;
        for (const auto& t : trials) total += t.wall_time;
        s["wall_time"] = total;
    }
    return s;
}

MonteCarloReport run_monte_carlo(const ScenarioConfig& cfg, int trials, std::uint64_t seed_base) {
    if (trials < 1) throw UsageError("run_monte_carlo: trials must be at least 1");
    MonteCarloReport report;
    report.trials.resize(static_cast<std::size_t>(trials));

    auto run_trial = [&](int k) {
        TrialOutcome& out = report.trials[static_cast<std::size_t>(k)];
        out.trial = k;
        out.seed = trials == 1 ? seed_base : derive_seed(seed_base, static_cast<std::uint64_t>(k));
        ScenarioConfig trial_cfg = cfg;
        trial_cfg.run.seed = out.seed;
        trial_cfg.outputs.beliefs = false;
        const auto start = Clock::now();
        try {
            RunReport r = run_scenario(trial_cfg);
            for (const auto& t : r.targets) {
                out.localization_times.push_back(t.localization_time);
                out.detection_times.push_back(t.detection_time);
            }
        } catch (const std::exception& e) {
            out.failed = true;
            out.error = e.what();
        }
        out.wall_time = seconds_since(start);
    };

    const unsigned workers = std::max(1u, std::min(std::thread::hardware_concurrency(), static_cast<unsigned>(trials)));
    if (workers == 1) {
        for (int k = 0; k < trials; ++k) run_trial(k);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int k = next++; k < trials; k = next++) run_trial(k);
            });
        for (auto& th : pool) th.join();
    }

    for (const auto& t : report.trials) {
        std::optional<double> first;
        std::optional<double> all;
        bool every = !t.failed && !t.localization_times.empty();
        double latest = 0.0;
        for (const auto& lt : t.localization_times) {
            if (lt) {
                first = first ? std::min(*first, *lt) : *lt;
                latest = std::max(latest, *lt);
            } else {
                every = false;
            }
        }
        if (every) all = latest;
        report.first_localized.push_back(first);
        report.all_localized.push_back(all);
    }
    return report;
}

// --- output ---------------------------------------------------------------------------------

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    auto out = open_output(path);
    out << doc.dump(2) << '\n';
}

}  // namespace

void write_report(const RunReport& report, const OutputSpec& outputs, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", report.config_echo);
    write_json(dir / "summary.json", report.summary(outputs.wall_clock));

    if (outputs.steps) {
        auto out = open_output(dir / "steps.csv");
        const Eigen::Index n = report.agents.empty() || report.agents.front().steps.empty() ? 0 : report.agents.front().steps.front().state.size();
        const Eigen::Index m = n == 0 ? 0 : report.agents.front().steps.front().applied_control.size();
        out << "agent,step,time";
        for (Eigen::Index k = 0; k < n; ++k) out << ",x" << k;
        for (Eigen::Index k = 0; k < m; ++k) out << ",u" << k;
        out << ",tau_A,lambda_A,cost_before,cost_after,contraction_bound,fallback";
        if (outputs.wall_clock) out << ",wall_us";
        out << '\n';
        for (std::size_t a = 0; a < report.agents.size(); ++a) {
            for (const auto& s : report.agents[a].steps) {
                out << a << ',' << s.step << ',' << s.time;
                for (Eigen::Index k = 0; k < s.state.size(); ++k) out << ',' << s.state[k];
                for (Eigen::Index k = 0; k < s.applied_control.size(); ++k) out << ',' << s.applied_control[k];
                out << ',' << (s.action.empty() ? std::nan("") : s.action.application_time) << ',' << s.action.duration << ','
                    << s.cost_before << ',' << s.cost_after << ',' << s.contraction_bound << ',' << s.fallback;
                if (outputs.wall_clock) out << ',' << s.wall_us;
                out << '\n';
            }
        }
    }
    if (outputs.ergodicity) {
        auto out = open_output(dir / "ergodicity.csv");
        out << "time,agent,ergodicity\n";
        for (std::size_t a = 0; a < report.agents.size(); ++a)
            for (const auto& [t, v] : report.agents[a].metric_series) out << t << ',' << a << ',' << v << '\n';
        for (const auto& [t, v] : report.collective_series) out << t << ",collective," << v << '\n';
    }
    if (outputs.beliefs && !report.beliefs.empty()) {
        auto out = open_output(dir / "beliefs.csv");
        const Eigen::Index p = report.beliefs.front().mean.size();
        out << "time,id,detected";
        for (Eigen::Index k = 0; k < p; ++k) out << ",mean" << k;
        for (Eigen::Index k = 0; k < p; ++k) out << ",var" << k;
        out << ",error,localized\n";
        for (const auto& r : report.beliefs) {
            out << r.time << ',' << r.id << ',' << (r.detected ? 1 : 0);
            for (Eigen::Index k = 0; k < p; ++k) out << ',' << r.mean[k];
            for (Eigen::Index k = 0; k < p; ++k) out << ',' << r.covariance_diagonal[k];
            out << ',' << r.error << ',' << (r.localized ? 1 : 0) << '\n';
        }
    }
    if (outputs.grids) {
        if (report.density) save_grid(*report.density, dir / "density.grid");
        if (report.statistics) save_grid(*report.statistics, dir / "statistics.grid");
    }
}

void write_monte_carlo(const MonteCarloReport& report, const nlohmann::json& config_echo, const OutputSpec& outputs,
                       const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", config_echo);
    write_json(dir / "summary.json", report.summary(outputs.wall_clock));
    auto out = open_output(dir / "trials.csv");
    out << "trial,seed,target,detection_time,localization_time,failed\n";
    for (const auto& t : report.trials) {
        if (t.failed || t.localization_times.empty()) {
            out << t.trial << ',' << t.seed << ",,,," << (t.failed ? 1 : 0) << '\n';
            continue;
        }
        for (std::size_t j = 0; j < t.localization_times.size(); ++j) {
            out << t.trial << ',' << t.seed << ',' << j << ',';
            if (t.detection_times[j]) out << *t.detection_times[j];
            out << ',';
            if (t.localization_times[j]) out << *t.localization_times[j];
            out << ",0\n";
        }
    }
}

}  // namespace rhee
