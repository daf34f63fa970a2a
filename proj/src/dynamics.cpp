#include "rhee/dynamics.hpp"

#include "rhee/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace rhee {

namespace {

constexpr double kTimeEps = 1e-9;

}  // namespace

void ControlAffineSystem::validate() const {
    if (n < 1 || m < 1) throw UsageError("ControlAffineSystem: dimensions must be positive");
    if (!drift || !input_map) throw UsageError("ControlAffineSystem: drift and input map are required");
    if (u_min.size() != m || u_max.size() != m) throw UsageError("ControlAffineSystem: bounds must have m entries");
    for (int j = 0; j < m; ++j) {
        // rotor-force systems have u_min = 0, so only u_min <= 0 < u_max is required
        if (!(u_min[j] <= 0.0) || !(u_max[j] > 0.0)) {
            throw UsageError("ControlAffineSystem: bounds must satisfy u_min <= 0 < u_max");
        }
    }
    if (ergodic_projection.empty()) throw UsageError("ControlAffineSystem: ergodic projection is empty");
    std::set<int> seen;
    for (int i : ergodic_projection) {
        if (i < 0 || i >= n || !seen.insert(i).second) {
            throw UsageError("ControlAffineSystem: ergodic projection must hold distinct valid state indices");
        }
    }
}

Eigen::VectorXd ControlAffineSystem::f(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return drift(t, x) + input_map(t, x) * u;
}

Eigen::VectorXd ControlAffineSystem::project(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::VectorXd s(ergodic_dims());
    for (int i = 0; i < ergodic_dims(); ++i) s[i] = x[ergodic_projection[static_cast<std::size_t>(i)]];
    return s;
}

bool Action::active_at(double t) const {
    return !empty() && t >= application_time - kTimeEps && t < end_time() - kTimeEps;
}

ControlSignal::ControlSignal(NominalControl nominal, Eigen::VectorXd u_min, Eigen::VectorXd u_max)
    : nominal_(std::move(nominal)), u_min_(std::move(u_min)), u_max_(std::move(u_max)) {
    if (!nominal_) throw UsageError("ControlSignal: nominal control is required");
    if (u_min_.size() != u_max_.size()) throw UsageError("ControlSignal: bound sizes differ");
}

Eigen::VectorXd ControlSignal::operator()(double t, const Eigen::VectorXd& x) const {
    for (auto it = actions_.rbegin(); it != actions_.rend(); ++it) {
        if (it->active_at(t)) return saturate(it->value, u_min_, u_max_);
    }
    return saturate(nominal_(t, x), u_min_, u_max_);
}

void ControlSignal::insert(Action action) {
    if (action.empty()) return;
    if (action.value.size() != u_min_.size()) throw UsageError("ControlSignal: action has wrong dimension");
    action.value = saturate(action.value, u_min_, u_max_);
    actions_.push_back(std::move(action));
}

void ControlSignal::transform_actions(const std::function<void(Eigen::VectorXd&)>& fn) {
    for (auto& a : actions_) {
        fn(a.value);
        a.value = saturate(a.value, u_min_, u_max_);
    }
}

void ControlSignal::drop_before(double t) {
    std::erase_if(actions_, [t](const Action& a) { return a.end_time() <= t + kTimeEps; });
}

StateTrajectory integrate(const ControlAffineSystem& sys, const Eigen::VectorXd& x0, double t0, double t1,
                          const ControlSignal& u, double dt) {
    if (!(dt > 0.0)) throw UsageError("integrate: dt must be positive");
    if (!(t1 > t0)) throw UsageError("integrate: t1 must exceed t0");
    if (x0.size() != sys.n) throw UsageError("integrate: initial state has wrong dimension");
    const double span = t1 - t0;
    const auto steps = static_cast<Eigen::Index>(std::max(1.0, std::ceil(span / dt - 1e-9)));

    StateTrajectory traj;
    traj.times.resize(static_cast<std::size_t>(steps + 1));
    traj.states.resize(sys.n, steps + 1);
    traj.controls.resize(sys.m, steps + 1);

    Eigen::VectorXd x = x0;
    traj.states.col(0) = x;
    traj.times[0] = t0;
    for (Eigen::Index j = 0; j < steps; ++j) {
        const double t = t0 + static_cast<double>(j) * dt;
        const double t_next = (j + 1 == steps) ? t1 : t0 + static_cast<double>(j + 1) * dt;
        const double h = t_next - t;
        const Eigen::VectorXd uj = u(t, x);
        traj.controls.col(j) = uj;
        const Eigen::VectorXd k1 = sys.f(t, x, uj);
        const Eigen::VectorXd k2 = sys.f(t + 0.5 * h, x + 0.5 * h * k1, uj);
        const Eigen::VectorXd k3 = sys.f(t + 0.5 * h, x + 0.5 * h * k2, uj);
        const Eigen::VectorXd k4 = sys.f(t + h, x + h * k3, uj);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!x.allFinite()) throw IntegrationDiverged(t_next, "integrate: state became non-finite");
        traj.times[static_cast<std::size_t>(j + 1)] = t_next;
        traj.states.col(j + 1) = x;
    }
    traj.controls.col(steps) = u(t1, x);
    return traj;
}

Eigen::MatrixXd linearize(const ControlAffineSystem& sys, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    if (sys.state_jacobian) return sys.state_jacobian(t, x, u);
    constexpr double step = 1e-6;
    Eigen::MatrixXd a(sys.n, sys.n);
    Eigen::VectorXd xp = x, xm = x;
    for (int i = 0; i < sys.n; ++i) {
        xp[i] = x[i] + step;
        xm[i] = x[i] - step;
        a.col(i) = (sys.f(t, xp, u) - sys.f(t, xm, u)) / (2.0 * step);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    return a;
}

Eigen::VectorXd saturate(const Eigen::VectorXd& u, const Eigen::VectorXd& u_min, const Eigen::VectorXd& u_max) {
    return u.cwiseMax(u_min).cwiseMin(u_max);
}

std::vector<int> reflect_into_domain(const ControlAffineSystem& sys, const std::vector<double>& bounds, Eigen::VectorXd& x) {
    std::vector<int> odd;
    if (!sys.walls) return odd;
    for (int d = 0; d < sys.ergodic_dims(); ++d) {
        const int i = sys.ergodic_projection[static_cast<std::size_t>(d)];
        const double len = bounds[static_cast<std::size_t>(d)];
        int flips = 0;
        while (x[i] < 0.0 || x[i] > len) {
            sys.walls->state(x, d, x[i] < 0.0 ? 0.0 : len);
            if (++flips > 1000) throw IntegrationDiverged(0.0, "reflect_into_domain: state too far outside the domain");
        }
        if (flips % 2 == 1) odd.push_back(d);
    }
    return odd;
}

ControlAffineSystem make_double_integrator(double u_bound, bool elastic_walls) {
    if (!(u_bound > 0.0)) throw UsageError("make_double_integrator: bound must be positive");
    ControlAffineSystem sys;
    sys.name = "double_integrator";
    sys.n = 4;
    sys.m = 2;
    sys.drift = [](double, const Eigen::VectorXd& x) {
        Eigen::VectorXd g(4);
        g << x[1], 0.0, x[3], 0.0;
        return g;
    };
    sys.input_map = [](double, const Eigen::VectorXd&) {
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(4, 2);
        h(1, 0) = 1.0;
        h(3, 1) = 1.0;
        return h;
    };
    sys.state_jacobian = [](double, const Eigen::VectorXd&, const Eigen::VectorXd&) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
        a(0, 1) = 1.0;
        a(2, 3) = 1.0;
        return a;
    };
    sys.u_min = Eigen::VectorXd::Constant(2, -u_bound);
    sys.u_max = Eigen::VectorXd::Constant(2, u_bound);
    sys.ergodic_projection = {0, 2};
    if (elastic_walls) {
        sys.walls = WallReflection{
            [](Eigen::VectorXd& x, int dim, double wall) {
                x[2 * dim] = 2.0 * wall - x[2 * dim];
                x[2 * dim + 1] = -x[2 * dim + 1];
            },
            [](Eigen::VectorXd& u, int dim) { u[dim] = -u[dim]; }};
    }
    sys.validate();
    return sys;
}

ControlAffineSystem make_quadrotor12(const QuadrotorParams& p, bool elastic_walls) {
    if (!(p.mass > 0.0) || !(p.inertia_xx > 0.0) || !(p.inertia_yy > 0.0) || !(p.inertia_zz > 0.0) || !(p.arm > 0.0)) {
        throw UsageError("make_quadrotor12: physical constants must be positive");
    }
    ControlAffineSystem sys;
    sys.name = "quadrotor12";
    sys.n = 12;
    sys.m = 4;
    const double a_roll = (p.inertia_yy - p.inertia_zz) / p.inertia_xx;
    const double a_pitch = (p.inertia_zz - p.inertia_xx) / p.inertia_yy;
    const double a_yaw = (p.inertia_xx - p.inertia_yy) / p.inertia_zz;

    sys.drift = [=](double, const Eigen::VectorXd& x) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(12);
        g.segment<3>(0) = x.segment<3>(3);
        g[5] = -p.gravity;
        g.segment<3>(6) = x.segment<3>(9);
        g[9] = a_roll * x[10] * x[11];
        g[10] = a_pitch * x[9] * x[11];
        g[11] = a_yaw * x[9] * x[10];
        return g;
    };
    sys.input_map = [=](double, const Eigen::VectorXd& x) {
        const double cphi = std::cos(x[6]), sphi = std::sin(x[6]);
        const double cth = std::cos(x[7]), sth = std::sin(x[7]);
        const double cpsi = std::cos(x[8]), spsi = std::sin(x[8]);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(12, 4);
        const double dx = (cphi * sth * cpsi + sphi * spsi) / p.mass;
        const double dy = (cphi * sth * spsi - sphi * cpsi) / p.mass;
        const double dz = (cphi * cth) / p.mass;
        for (int j = 0; j < 4; ++j) {
            h(3, j) = dx;
            h(4, j) = dy;
            h(5, j) = dz;
        }
        // roll from left/right, pitch from back/front, yaw from rotor drag
        h(9, 1) = p.arm / p.inertia_xx;
        h(9, 3) = -p.arm / p.inertia_xx;
        h(10, 0) = -p.arm / p.inertia_yy;
        h(10, 2) = p.arm / p.inertia_yy;
        h(11, 0) = p.yaw_coefficient / p.inertia_zz;
        h(11, 1) = -p.yaw_coefficient / p.inertia_zz;
        h(11, 2) = p.yaw_coefficient / p.inertia_zz;
        h(11, 3) = -p.yaw_coefficient / p.inertia_zz;
        return h;
    };
    sys.state_jacobian = [=](double, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(12, 12);
        a.block<3, 3>(0, 3).setIdentity();
        a.block<3, 3>(6, 9).setIdentity();
        const double thrust = u.sum() / p.mass;
        const double cphi = std::cos(x[6]), sphi = std::sin(x[6]);
        const double cth = std::cos(x[7]), sth = std::sin(x[7]);
        const double cpsi = std::cos(x[8]), spsi = std::sin(x[8]);
        a(3, 6) = thrust * (-sphi * sth * cpsi + cphi * spsi);
        a(3, 7) = thrust * (cphi * cth * cpsi);
        a(3, 8) = thrust * (-cphi * sth * spsi + sphi * cpsi);
        a(4, 6) = thrust * (-sphi * sth * spsi - cphi * cpsi);
        a(4, 7) = thrust * (cphi * cth * spsi);
        a(4, 8) = thrust * (cphi * sth * cpsi + sphi * spsi);
        a(5, 6) = -thrust * sphi * cth;
        a(5, 7) = -thrust * cphi * sth;
        a(9, 10) = a_roll * x[11];
        a(9, 11) = a_roll * x[10];
        a(10, 9) = a_pitch * x[11];
        a(10, 11) = a_pitch * x[9];
        a(11, 9) = a_yaw * x[10];
        a(11, 10) = a_yaw * x[9];
        return a;
    };
    sys.u_min = Eigen::VectorXd::Constant(4, p.u_min);
    sys.u_max = Eigen::VectorXd::Constant(4, p.u_max);
    sys.ergodic_projection = {0, 1};
    if (elastic_walls) {
        sys.walls = WallReflection{
            [](Eigen::VectorXd& x, int dim, double wall) {
                x[dim] = 2.0 * wall - x[dim];
                x[3 + dim] = -x[3 + dim];
                const int tilt = dim == 0 ? 7 : 6;  // pitch tilts along x, roll along y
                for (int k : {tilt, 8, tilt + 3, 11}) x[k] = -x[k];
            },
            [](Eigen::VectorXd& u, int dim) {
                if (dim == 0) {
                    std::swap(u[0], u[2]);
                } else {
                    std::swap(u[1], u[3]);
                }
            }};
    }
    sys.validate();
    return sys;
}

NominalControl make_pd_height_hold(const QuadrotorParams& p, double target_height, PdGains gains) {
    if (!(gains.kp > 0.0) || !(gains.kd > 0.0)) throw UsageError("make_pd_height_hold: gains must be positive");
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(4, p.u_min);
    const Eigen::VectorXd hi = Eigen::VectorXd::Constant(4, p.u_max);
    return [=](double, const Eigen::VectorXd& x) {
        const double correction = p.mass / 4.0 * (gains.kp * (target_height - x[2]) - gains.kd * x[5]);
        return saturate(Eigen::VectorXd::Constant(4, p.hover_thrust() + correction), lo, hi);
    };
}

NominalControl make_stabilized_hover(const QuadrotorParams& p, double target_height, PdGains height_gains,
                                     AttitudeGains attitude_gains) {
    if (!(attitude_gains.kp >= 0.0) || !(attitude_gains.kd >= 0.0)) throw UsageError("make_stabilized_hover: gains must be non-negative");
    const NominalControl height = make_pd_height_hold(p, target_height, height_gains);
    const Eigen::VectorXd lo = Eigen::VectorXd::Constant(4, p.u_min);
    const Eigen::VectorXd hi = Eigen::VectorXd::Constant(4, p.u_max);
    return [=](double t, const Eigen::VectorXd& x) {
        Eigen::VectorXd u = height(t, x);
        const auto torque = [&](int angle, double inertia) {
            return inertia * (-attitude_gains.kp * x[angle] - attitude_gains.kd * x[angle + 3]);
        };
        const double roll = torque(6, p.inertia_xx) / (2.0 * p.arm);
        const double pitch = torque(7, p.inertia_yy) / (2.0 * p.arm);
        const double yaw = torque(8, p.inertia_zz) / (4.0 * p.yaw_coefficient);
        u[0] += -pitch + yaw;
        u[1] += roll - yaw;
        u[2] += pitch + yaw;
        u[3] += -roll - yaw;
        return saturate(u, lo, hi);
    };
}

NominalControl make_zero_nominal(int m) {
    return [m](double, const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(m); };
}

NominalControl make_velocity_damping(double damping) {
    if (!(damping >= 0.0)) throw UsageError("damping must be non-negative");
    return [damping](double, const Eigen::VectorXd& x) {
        if (x.size() != 4) throw UsageError("velocity damping expects the planar double integrator state");
        return Eigen::Vector2d(-damping * x[1], -damping * x[3]).eval();
    };
}

}  // namespace rhee
