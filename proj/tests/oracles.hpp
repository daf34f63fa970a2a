#pragma once

#include "support.hpp"

#include "rhee/controller.hpp"
#include "rhee/dynamics.hpp"
#include "rhee/fourier.hpp"

#include <cstdint>
#include <optional>
#include <random>

namespace testing {

/// Positive density made of a constant plus a few random Gaussian bumps.
inline rhee::SpatialGrid random_density(std::mt19937_64& rng, const rhee::SearchDomain& domain, int cells = 40) {
    std::uniform_real_distribution<double> pos(0.15, 0.85), width(0.05, 0.2), mass(0.5, 3.0);
    struct Bump { Eigen::Vector2d c; double w, m; };
    std::vector<Bump> bumps(3);
    for (auto& b : bumps) b = {Eigen::Vector2d(pos(rng) * domain.length(0), pos(rng) * domain.length(1)), width(rng), mass(rng)};
    rhee::SpatialGrid grid(domain, {cells, cells});
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const Eigen::Vector2d s = grid.cell_center(c);
        double v = 0.2;
        for (const auto& b : bumps) v += b.m * std::exp(-(s - b.c).squaredNorm() / (2 * b.w * b.w));
        grid.values()[static_cast<Eigen::Index>(c)] = v;
    }
    grid.normalize();
    return grid;
}

/// Replays sampled controls as a function of time only.
inline rhee::ControlSignal frozen_controls(const rhee::StateTrajectory& x, const rhee::ControlAffineSystem& sys) {
    const double t0 = x.times.front();
    const double dt = x.times[1] - x.times[0];
    const Eigen::MatrixXd u = x.controls;
    return rhee::ControlSignal(
        [=](double t, const Eigen::VectorXd&) {
            const auto j = static_cast<Eigen::Index>(std::clamp(std::floor((t - t0) / dt + 1e-6), 0.0, double(u.cols() - 1)));
            return Eigen::VectorXd(u.col(j));
        },
        sys.u_min, sys.u_max);
}

struct InsertionCheck {
    double simulated = 0.0;  // (J(lambda) - J(0)) / lambda from rollouts
    double analytic = 0.0;   // rho^T (f(u_A) - f(u_def)) at tau
    double relative_error() const { return std::abs(simulated - analytic) / std::max(std::abs(analytic), 1e-8); }
};

enum class InsertionPoint {
    random,    // uniform sample on the horizon, u_A uniform in the input box
    selected,  // tau_A and u_A chosen by the schedule and application-time steps
};

/// Random ergodic objective with a nonzero history; the action is inserted
/// for `lambda` at a rollout sample (the rollout step equals lambda).
/// Returns nullopt when `selected` finds no improving action.
inline std::optional<InsertionCheck> insertion_gradient_check(std::uint64_t seed, bool quadrotor, double lambda = 1e-4,
                                                              InsertionPoint point = InsertionPoint::random) {
    using namespace rhee;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const SearchDomain domain = quadrotor ? SearchDomain({2.0, 2.0}) : SearchDomain({1.0, 1.0});
    const FourierBasis basis(domain, quadrotor ? 8 : 6);
    const ControlAffineSystem sys = quadrotor ? make_quadrotor12({}, false) : make_double_integrator();
    const double horizon = quadrotor ? 1.3 : 0.1;

    HorizonObjective obj;
    obj.basis = &basis;
    obj.phi = distribution_coeffs(random_density(rng, domain), basis);
    obj.Q = 1.0;
    obj.t0erg = 0.0;
    obj.t_start = 0.2 + 0.8 * unit(rng);
    obj.t_end = obj.t_start + horizon;

    TrajectorySegment past;
    const int n_past = 400;
    past.points.resize(2, n_past);
    const double cx = 0.3 + 0.4 * unit(rng), cy = 0.3 + 0.4 * unit(rng), w = 2.0 + 4.0 * unit(rng);
    for (int j = 0; j < n_past; ++j) {
        const double t = obj.t_start * j / (n_past - 1);
        past.times.push_back(t);
        past.points.col(j) << domain.length(0) * (cx + 0.2 * std::cos(w * t)), domain.length(1) * (cy + 0.2 * std::sin(1.7 * w * t));
    }
    obj.history = CoefficientVector(segment_integral(past, basis, 0.0, obj.t_start) / (obj.t_end - obj.t0erg));

    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(sys.n);
    Eigen::VectorXd u_a(sys.m);
    ControlSignal feedback;
    if (quadrotor) {
        const QuadrotorParams p;
        x0 << domain.length(0) * (0.3 + 0.4 * unit(rng)), domain.length(1) * (0.3 + 0.4 * unit(rng)), 1.0,
            unit(rng) - 0.5, unit(rng) - 0.5, 0.2 * (unit(rng) - 0.5), 0.2 * (unit(rng) - 0.5), 0.2 * (unit(rng) - 0.5),
            0.2 * (unit(rng) - 0.5), unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5;
        feedback = ControlSignal(make_stabilized_hover(p, 1.0, {100.0, 20.0}), sys.u_min, sys.u_max);
        for (int i = 0; i < sys.m; ++i) u_a[i] = p.u_max * unit(rng);
    } else {
        x0 << 0.2 + 0.6 * unit(rng), unit(rng) - 0.5, 0.2 + 0.6 * unit(rng), unit(rng) - 0.5;
        const Eigen::Vector2d u_const(10.0 * (unit(rng) - 0.5), 10.0 * (unit(rng) - 0.5));
        feedback = ControlSignal([u_const](double, const Eigen::VectorXd&) { return Eigen::VectorXd(u_const); }, sys.u_min, sys.u_max);
        for (int i = 0; i < sys.m; ++i) u_a[i] = 100.0 * (unit(rng) - 0.5);
    }

    const StateTrajectory x_fb = integrate(sys, x0, obj.t_start, obj.t_end, feedback, lambda);
    const ControlSignal u_def = frozen_controls(x_fb, sys);
    const StateTrajectory x_def = integrate(sys, x0, obj.t_start, obj.t_end, u_def, lambda);
    const double j_def = obj.cost(x_def, sys);

    const CostateTrajectory rho = integrate_costate(sys, x_def, obj);
    const auto n = x_def.samples();
    // tau on a 2e-4 lattice so that halving lambda keeps the same instant
    const double lattice = 2e-4;
    const double tau_offset = std::floor(unit(rng) * (horizon / lattice - 1.0)) * lattice;
    auto j_tau = std::min(static_cast<std::size_t>(std::llround(tau_offset / lambda)), n - 2);
    if (point == InsertionPoint::selected) {
        const Eigen::MatrixXd R = (quadrotor ? 0.1 : 1.0) * Eigen::MatrixXd::Identity(sys.m, sys.m);
        const auto schedule = action_schedule(rho, x_def, sys, R, -j_def / horizon);
        const auto candidate = application_time(schedule, rho, x_def, sys, obj.t_start, obj.t_end);
        if (!candidate) return std::nullopt;
        j_tau = candidate->sample;
        u_a = candidate->value;
    }
    const double tau = x_def.times[j_tau];
    const auto col = static_cast<Eigen::Index>(j_tau);

    InsertionCheck out;
    out.analytic = mode_insertion_gradient(rho.values.col(col), sys, tau, x_def.states.col(col), u_a, x_def.controls.col(col));
    ControlSignal trial = u_def;
    trial.insert(Action{u_a, tau, lambda});
    const StateTrajectory x_new = integrate(sys, x0, obj.t_start, obj.t_end, trial, lambda);
    out.simulated = (obj.cost(x_new, sys) - j_def) / lambda;
    return out;
}

/// Minimum of the schedule integrand over a regular grid on the input box.
inline double box_grid_minimum(const Eigen::VectorXd& rho, const Eigen::MatrixXd& h, const Eigen::VectorXd& u_def,
                               double alpha_d, const Eigen::MatrixXd& R, const Eigen::VectorXd& lo,
                               const Eigen::VectorXd& hi, int per_axis) {
    const auto m = lo.size();
    std::vector<int> idx(static_cast<std::size_t>(m), 0);
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd u(m);
    while (true) {
        for (Eigen::Index i = 0; i < m; ++i) u[i] = lo[i] + (hi[i] - lo[i]) * idx[static_cast<std::size_t>(i)] / (per_axis - 1);
        best = std::min(best, rhee::schedule_integrand(rho, h, u, u_def, alpha_d, R));
        std::size_t d = 0;
        while (d < idx.size() && ++idx[d] == per_axis) idx[d++] = 0;
        if (d == idx.size()) break;
    }
    return best;
}

}  // namespace testing

#include "rhee/estimation.hpp"

#include <numbers>

namespace testing {

/// EKF from a prior offset by 0.05, fed 50 exact bearings from vantages on a
/// 0.15 circle around the target (heights varied for the 3D model). Returns
/// the final distance between the belief mean and the target.
inline double triangulation_error(std::uint64_t seed, bool three_d, double sigma_init = 1.0) {
    using namespace rhee;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int p = three_d ? 3 : 2;
    const MeasurementModel model = three_d ? bearing_model_3d() : bearing_model_2d();
    Eigen::VectorXd truth = Eigen::VectorXd::Zero(p);
    truth[0] = 0.3 + 0.4 * unit(rng);
    truth[1] = 0.3 + 0.4 * unit(rng);
    Eigen::VectorXd offset(p);
    for (int i = 0; i < p; ++i) offset[i] = unit(rng) - 0.5;
    TargetBelief b{0, truth + 0.05 * offset.normalized(), sigma_init * sigma_init * Eigen::MatrixXd::Identity(p, p), true};
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (int k = 0; k < 50; ++k) {
        const double heading = phase + 2.0 * std::numbers::pi * ((17 * k) % 50) / 50.0;
        Eigen::VectorXd q(p);
        q[0] = truth[0] + 0.15 * std::cos(heading);
        q[1] = truth[1] + 0.15 * std::sin(heading);
        if (three_d) q[2] = 0.2 + 0.8 * (k % 5) / 4.0;
        b = ekf_update(b, model, q, model.predict(truth, q)).belief;
    }
    return (b.mean - truth).norm();
}

}  // namespace testing
