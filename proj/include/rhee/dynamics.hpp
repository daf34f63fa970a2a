#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rhee {

using DriftFn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;
using InputMapFn = std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)>;
using StateJacobianFn = std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&, const Eigen::VectorXd&)>;
/// Nominal (secondary-objective) control law u^nom(t, x).
using NominalControl = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

/// Elastic walls on the faces of the explored box: how the state and the
/// control mirror when explored coordinate `dim` reflects off the plane `wall`.
struct WallReflection {
    std::function<void(Eigen::VectorXd&, int dim, double wall)> state;
    std::function<void(Eigen::VectorXd&, int dim)> control;
};

/// xdot = g(t, x) + h(t, x) u, with box input bounds.
struct ControlAffineSystem {
    std::string name;
    int n = 0;
    int m = 0;
    DriftFn drift;
    InputMapFn input_map;
    /// Optional analytic D_x f(t, x, u); central differences are used when empty.
    StateJacobianFn state_jacobian;
    Eigen::VectorXd u_min;
    Eigen::VectorXd u_max;
    /// Indices of the state components that are ergodically explored.
    std::vector<int> ergodic_projection;
    /// Set for plants that bounce off the domain walls.
    std::optional<WallReflection> walls;

    /// Throws UsageError when the descriptor is inconsistent.
    void validate() const;

    Eigen::VectorXd f(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;
    Eigen::VectorXd project(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    int ergodic_dims() const { return static_cast<int>(ergodic_projection.size()); }
};

/// Single control action: value u_A applied on [tau_A, tau_A + lambda_A).
/// A zero duration means no action.
struct Action {
    Eigen::VectorXd value;
    double application_time = 0.0;
    double duration = 0.0;

    bool empty() const { return duration <= 0.0; }
    double end_time() const { return application_time + duration; }
    bool active_at(double t) const;
};

/// Piecewise control: stored actions (the most recently inserted wins where
/// they overlap) on top of a nominal law. Every evaluation is saturated.
class ControlSignal {
public:
    ControlSignal() = default;
    ControlSignal(NominalControl nominal, Eigen::VectorXd u_min, Eigen::VectorXd u_max);

    Eigen::VectorXd operator()(double t, const Eigen::VectorXd& x) const;

    void insert(Action action);
    /// Applies `fn` to every stored action value (nominal law untouched).
    void transform_actions(const std::function<void(Eigen::VectorXd&)>& fn);
    /// Drops actions that ended at or before t.
    void drop_before(double t);
    const std::vector<Action>& actions() const { return actions_; }
    /// Most recently inserted action, if any.
    const Action* inserted_action() const { return actions_.empty() ? nullptr : &actions_.back(); }
    const NominalControl& nominal() const { return nominal_; }

private:
    NominalControl nominal_;
    Eigen::VectorXd u_min_;
    Eigen::VectorXd u_max_;
    std::vector<Action> actions_;
};

/// Sampled rollout. Column j of `states` is x(times[j]); column j of
/// `controls` is the control held on [times[j], times[j+1]).
struct StateTrajectory {
    std::vector<double> times;
    Eigen::MatrixXd states;
    Eigen::MatrixXd controls;

    std::size_t samples() const { return times.size(); }
    Eigen::VectorXd final_state() const { return states.col(states.cols() - 1); }
};

/// Fixed-step RK4 with zero-order-hold controls evaluated at each step start.
/// Throws IntegrationDiverged on a non-finite state.
StateTrajectory integrate(const ControlAffineSystem& sys, const Eigen::VectorXd& x0, double t0, double t1,
                          const ControlSignal& u, double dt);

/// D_x f at (t, x, u).
Eigen::MatrixXd linearize(const ControlAffineSystem& sys, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

Eigen::VectorXd saturate(const Eigen::VectorXd& u, const Eigen::VectorXd& u_min, const Eigen::VectorXd& u_max);

/// Folds the explored coordinates of x back into [0, L_d] by mirror
/// reflection. Returns the dimensions reflected an odd number of times.
std::vector<int> reflect_into_domain(const ControlAffineSystem& sys, const std::vector<double>& bounds, Eigen::VectorXd& x);

/// Planar double integrator x = [p1, v1, p2, v2], u = [a1, a2].
ControlAffineSystem make_double_integrator(double u_bound = 50.0, bool elastic_walls = false);

/// Physical constants of the quadrotor model. Defaults are a generic
/// desk-scale airframe.
struct QuadrotorParams {
    double mass = 0.6;
    double gravity = 9.81;
    double arm = 0.2;
    double inertia_xx = 0.0075;
    double inertia_yy = 0.0075;
    double inertia_zz = 0.013;
    double yaw_coefficient = 0.02;
    double u_min = 0.0;
    double u_max = 12.0;

    double hover_thrust() const { return mass * gravity / 4.0; }
};

/// 12-state quadrotor: [x y z, xd yd zd, roll pitch yaw, roll/pitch/yaw rates],
/// inputs are the four rotor forces (front, left, back, right). With walls, a
/// bounce in x mirrors pitch and yaw and swaps front/back rotors; a bounce in y
/// mirrors roll and yaw and swaps left/right rotors.
ControlAffineSystem make_quadrotor12(const QuadrotorParams& params = {}, bool elastic_walls = false);

struct PdGains {
    double kp = 4.0;
    double kd = 3.0;
};

/// Hover thrust plus a PD correction on height, identical on all rotors.
NominalControl make_pd_height_hold(const QuadrotorParams& params, double target_height, PdGains gains = {});

/// PD gains on roll, pitch and yaw (angular acceleration per rad, per rad/s).
struct AttitudeGains {
    double kp = 20.0;
    double kd = 6.0;
};

/// Height hold plus a PD attitude hold towards level flight at zero yaw,
/// mixed onto the rotors and saturated.
NominalControl make_stabilized_hover(const QuadrotorParams& params, double target_height, PdGains height_gains = {},
                                     AttitudeGains attitude_gains = {});

/// u^nom = 0 (within bounds).
NominalControl make_zero_nominal(int m);

/// u^nom = -damping * velocity for the planar double integrator.
NominalControl make_velocity_damping(double damping);

}  // namespace rhee
