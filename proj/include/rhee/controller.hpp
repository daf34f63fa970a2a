#pragma once

// Receding-horizon ergodic exploration: per-step single-action synthesis
// (costate, closed-form schedule, application time, duration line search)
// and the receding-horizon / reactive outer loops.

#include "rhee/dynamics.hpp"
#include "rhee/fourier.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rhee {

struct ControllerConfig {
    double Q = 1.0;
    /// Control weight. Empty means r_scale * identity.
    Eigen::MatrixXd R;
    double r_scale = 1.0;
    int K = 10;
    double horizon = 0.1;      // T
    double sample_time = 0.02; // t_s
    /// Desired mode-insertion rate. Unset: -J(default rollout) / T.
    std::optional<double> alpha_d;
    double memory = 0.0;       // M_erg, used by the reactive loop
    double lambda_init = 0.0;  // <= 0 means t_s
    double shrink = 0.5;
    int max_iterations = 10;
    double dt = 0.0;           // <= 0 means t_s / 10
    double contraction_slack = 1e-6;
    /// Weight of a quadratic penalty on leaving the domain (0 disables it).
    double boundary_weight = 0.0;

    double step() const { return dt > 0.0 ? dt : sample_time / 10.0; }
    double initial_duration() const { return lambda_init > 0.0 ? lambda_init : sample_time; }
    Eigen::MatrixXd control_weight(int m) const;
    void validate(int m) const;
};

/// How the controller's own coefficients enter the cost:
/// combined = own_weight * own + offset (offset empty means zero).
struct CoefficientBlend {
    double own_weight = 1.0;
    Eigen::VectorXd offset;

    CoefficientVector apply(const CoefficientVector& own) const;
};

struct TimeWindow {
    double t0erg;
    double t_end;
    double length() const { return t_end - t0erg; }
};

/// Everything needed to score a horizon rollout.
struct HorizonObjective {
    const FourierBasis* basis = nullptr;
    CoefficientVector phi;
    double Q = 1.0;
    double t0erg = 0.0;
    double t_start = 0.0;         // t_i
    double t_end = 0.0;           // t_i + T
    CoefficientVector history;    // cbar_i
    CoefficientBlend blend;
    double boundary_weight = 0.0;

    /// c_k^i of the agent alone for a rollout over [t_i, t_i + T].
    CoefficientVector own_coefficients(const StateTrajectory& x, const ControlAffineSystem& sys) const;
    CoefficientVector combined_coefficients(const StateTrajectory& x, const ControlAffineSystem& sys) const;
    /// J_E (plus the boundary penalty when enabled).
    double cost(const StateTrajectory& x, const ControlAffineSystem& sys) const;
    double ergodic_cost(const CoefficientVector& combined) const;
};

/// Sampled ergodic costate, stored on the forward time grid.
struct CostateTrajectory {
    std::vector<double> times;
    Eigen::MatrixXd values;  // n x N
};

/// u_s*(t) on the rollout grid, before and after saturation.
struct ActionSchedule {
    std::vector<double> times;
    Eigen::MatrixXd raw;
    Eigen::MatrixXd saturated;
};

struct ActionCandidate {
    double time;
    std::size_t sample;
    Eigen::VectorXd value;
    double sensitivity;  // J_t(tau) < 0
};

/// Contraction requirement for the realized cost: J* <= reference + allowed + slack.
struct ContractionTest {
    bool active = false;
    double reference_cost = 0.0;
    double allowed_change = 0.0;
    double slack = 0.0;

    bool satisfied(double cost) const {
        return !active || cost - reference_cost <= allowed_change + slack;
    }
};

struct LineSearchResult {
    Action action;  // duration 0 when nothing was accepted
    double cost = 0.0;
    int iterations = 0;
    std::optional<StateTrajectory> trajectory;
};

struct StepResult {
    std::int64_t step = 0;
    double time = 0.0;
    Eigen::VectorXd state;
    Eigen::VectorXd applied_control;  // u_i*(t_i)
    Action action;
    double cost_before = 0.0;         // J_E along the default rollout
    double cost_after = 0.0;          // J_E along the chosen rollout
    double previous_cost = 0.0;       // J_E(x*_{i-1}); NaN on the first step
    double contraction_rhs = 0.0;     // -int L over [t_{i-1}, t_i]; NaN on the first step
    double contraction_bound = 0.0;   // C_E over [t_{i-1}+T, t_i+T] (logged only); NaN on the first step
    double alpha_d = 0.0;
    int line_search_iterations = 0;
    bool constrained = false;
    bool contraction_ok = true;
    std::string fallback;             // empty when an action was accepted
    double wall_us = 0.0;
};

// --- per-step operations --------------------------------------------------

/// l(t, x) lifted to the full state (zero on non-ergodic states).
Eigen::VectorXd running_grad(const FourierBasis& basis, const CoefficientVector& c_now, const CoefficientVector& phi,
                             double Q, const TimeWindow& window, const Eigen::VectorXd& x,
                             const std::vector<int>& projection, double own_weight = 1.0);

using ForcingFn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

/// Backward RK4 for rho' = -l(t, x)^T - D_x f^T rho from rho(t_end) = 0.
CostateTrajectory integrate_costate(const ControlAffineSystem& sys, const StateTrajectory& x_def, const ForcingFn& forcing);

CostateTrajectory integrate_costate(const ControlAffineSystem& sys, const StateTrajectory& x_def,
                                    const HorizonObjective& objective);

/// rho^T [f(t, x, u_candidate) - f(t, x, u_default)].
double mode_insertion_gradient(const Eigen::VectorXd& rho, const ControlAffineSystem& sys, double t,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& u_candidate,
                               const Eigen::VectorXd& u_default);

/// Integrand of the schedule objective at one time.
double schedule_integrand(const Eigen::VectorXd& rho, const Eigen::MatrixXd& h, const Eigen::VectorXd& u,
                          const Eigen::VectorXd& u_default, double alpha_d, const Eigen::MatrixXd& R);

/// u_s* = (Lambda + R^T)^-1 [Lambda u_def + h^T rho alpha_d], Lambda = h^T rho rho^T h.
ActionSchedule action_schedule(const CostateTrajectory& rho, const StateTrajectory& x_def, const ControlAffineSystem& sys,
                               const Eigen::MatrixXd& R, double alpha_d);

/// Sample in [t_begin, t_end) minimizing J_t; nullopt when no sample has J_t < 0.
std::optional<ActionCandidate> application_time(const ActionSchedule& schedule, const CostateTrajectory& rho,
                                                const StateTrajectory& x_def, const ControlAffineSystem& sys,
                                                double t_begin, double t_end);

/// Q * sum Lambda_k (c_k(t) - phi_k)^2 with c_k(t) the running average up to t.
double running_cost(const FourierBasis& basis, const CoefficientVector& phi, double Q, const CoefficientBlend& blend,
                    const CoefficientVector& running_average);

/// Trapezoid integral of L = dB/dt along `path` (projected points) over its time span.
/// `base_integral` is the unnormalized integral of F_k from t0erg to the path start.
double contraction_integral(const FourierBasis& basis, const CoefficientVector& phi, double Q, const CoefficientBlend& blend,
                            double t0erg, const Eigen::VectorXd& base_integral, const TrajectorySegment& path);

/// L(x(.), u, t) at one instant given the running integral up to t.
double contraction_rate(const FourierBasis& basis, const CoefficientVector& phi, double Q, const CoefficientBlend& blend,
                        double t0erg, double t, const Eigen::VectorXd& running_integral, const Eigen::VectorXd& f_now);

using RolloutFn = std::function<std::optional<std::pair<StateTrajectory, double>>(const ControlSignal&)>;

/// Tries lambda = lambda_init * shrink^j and keeps the first whose realized
/// cost is below `cost_default` and passes `test`.
LineSearchResult duration_line_search(const ActionCandidate& candidate, const ControlSignal& u_default,
                                      double cost_default, const ControllerConfig& cfg, double horizon_end,
                                      const ContractionTest& test, const RolloutFn& rollout);

// --- stateful controller ----------------------------------------------------

/// Data carried between steps: constant size apart from at most one horizon
/// of stored actions.
struct ControllerHistory {
    std::int64_t step = 0;
    double t_run_start = 0.0;
    double t0erg = 0.0;
    double t_prev = 0.0;
    double t_curr = 0.0;
    CoefficientVector partial;       // cbar_i
    CoefficientVector prev_partial;  // cbar_{i-1}
    Eigen::VectorXd start_point;     // explored coordinates at t0erg
    std::optional<double> previous_cost;
    ControlSignal plan;              // u*_{i-1}, then u*_i after a step
};

class ErgodicController {
public:
    ErgodicController(ControlAffineSystem sys, FourierBasis basis, ControllerConfig cfg, NominalControl nominal);

    /// Starts a fresh run at t_start from state x. `history_integral` is the
    /// unnormalized integral of F_k over [t0erg, t_start] (zero if t0erg == t_start).
    void reset(double t_start, const Eigen::VectorXd& x, double t0erg, CoefficientVector phi,
               std::optional<Eigen::VectorXd> history_integral = std::nullopt);

    void set_blend(CoefficientBlend blend) { blend_ = std::move(blend); }
    const CoefficientBlend& blend() const { return blend_; }

    /// Solves the open-loop problem at (t_i, x_i). The returned plan is also
    /// stored as the next step's default.
    StepResult solve(double t_i, const Eigen::VectorXd& x_i);

    /// Applies the current plan on [t_i, t_i + t_s] and folds the realized
    /// segment into the history coefficients.
    StateTrajectory apply(const Eigen::VectorXd& x_i);

    const ControlAffineSystem& system() const { return sys_; }
    const FourierBasis& basis() const { return basis_; }
    const ControllerConfig& config() const { return cfg_; }
    const CoefficientVector& phi() const { return phi_; }
    const ControllerHistory& history() const { return hist_; }
    const ControlSignal& plan() const { return hist_.plan; }
    /// c_k^i of the last solved plan (own trajectory only).
    const CoefficientVector& planned_coefficients() const { return planned_; }
    double time() const { return hist_.t_curr; }
    /// Mirrors the stored actions along the given explored dimensions
    /// (after the plant bounced off a wall).
    void mirror_plan(const std::vector<int>& dims);
    /// Number of doubles kept between steps.
    std::size_t persisted_size() const;

    HorizonObjective objective(double t_i) const;
    /// Ergodic metric of the realized trajectory over [t0erg, now] (without Q).
    double realized_metric() const;
    CoefficientVector realized_coefficients() const;

private:
    ControlAffineSystem sys_;
    FourierBasis basis_;
    ControllerConfig cfg_;
    NominalControl nominal_;
    Eigen::MatrixXd R_;
    CoefficientVector phi_;
    CoefficientBlend blend_;
    ControllerHistory hist_;
    CoefficientVector planned_;
};

namespace detail {

struct OpenLoopSolution {
    ControlSignal plan;
    StepResult result;
    CoefficientVector planned;  // own c_k^i along the chosen rollout
};

OpenLoopSolution solve_step(double t_i, const Eigen::VectorXd& x_i, const ControllerHistory& history,
                            const CoefficientVector& phi, const ControlAffineSystem& sys, const FourierBasis& basis,
                            const ControllerConfig& cfg, const CoefficientBlend& blend);

}  // namespace detail

/// One open-loop solve as a pure function of the history.
std::pair<ControlSignal, StepResult> solve_open_loop(double t_i, const Eigen::VectorXd& x_i, const ControllerHistory& history,
                                                     const CoefficientVector& phi, const ControlAffineSystem& sys,
                                                     const FourierBasis& basis, const ControllerConfig& cfg,
                                                     const CoefficientBlend& blend = {});

// --- outer loops --------------------------------------------------------------

struct ClosedLoopRun {
    StateTrajectory trajectory;
    std::vector<StepResult> steps;
    /// Ergodic metric of the realized trajectory at each step boundary.
    std::vector<std::pair<double, double>> metric_series;
};

ClosedLoopRun rhee_run(double t0, const Eigen::VectorXd& x0, const CoefficientVector& phi, double t0erg, double tf,
                       const ControlAffineSystem& sys, const FourierBasis& basis, const ControllerConfig& cfg,
                       const NominalControl& u_nom);

/// For plants with elastic walls: folds the applied samples into the domain
/// and mirrors the controller's pending actions to match the final state.
void contain_in_domain(ErgodicController& controller, StateTrajectory& applied);

/// Supplies phi at each distribution update (time, current state).
using PhiSource = std::function<CoefficientVector(double, const Eigen::VectorXd&)>;

ClosedLoopRun reactive_run(double t0, const Eigen::VectorXd& x0, double tf, double t_phi, const PhiSource& phi_source,
                           const ControlAffineSystem& sys, const FourierBasis& basis, const ControllerConfig& cfg,
                           const NominalControl& u_nom);

/// Closed-loop positions kept for re-windowing the history at distribution updates.
class TrailBuffer {
public:
    void append(const StateTrajectory& applied, const ControlAffineSystem& sys);
    void trim_before(double t);
    /// Unnormalized integral of F_k over [t_begin, t_end] (clipped to what is stored).
    Eigen::VectorXd integral(const FourierBasis& basis, double t_begin, double t_end) const;
    std::optional<double> earliest() const;
    std::size_t size() const { return times_.size(); }

private:
    std::vector<double> times_;
    std::vector<Eigen::VectorXd> points_;
};

/// Restarts `controller` at t for a new phi with t0erg = t - memory (clipped to the trail).
void restart_with_memory(ErgodicController& controller, double t, const Eigen::VectorXd& x, CoefficientVector phi,
                         const TrailBuffer& trail, double memory);

}  // namespace rhee
