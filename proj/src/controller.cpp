#include "rhee/controller.hpp"

#include "rhee/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace rhee {

namespace {

constexpr double kTimeEps = 1e-9;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TrajectorySegment explored_path(const StateTrajectory& x, const ControlAffineSystem& sys) {
    TrajectorySegment seg;
    seg.times = x.times;
    seg.points.resize(sys.ergodic_dims(), static_cast<Eigen::Index>(x.samples()));
    for (Eigen::Index j = 0; j < seg.points.cols(); ++j) seg.points.col(j) = sys.project(x.states.col(j));
    return seg;
}

Eigen::VectorXd interpolate(const TrajectorySegment& seg, double t) {
    const auto& ts = seg.times;
    if (t <= ts.front()) return seg.points.col(0);
    if (t >= ts.back()) return seg.points.col(seg.points.cols() - 1);
    const auto it = std::upper_bound(ts.begin(), ts.end(), t);
    const auto j = static_cast<Eigen::Index>(it - ts.begin());
    const double a = (t - ts[static_cast<std::size_t>(j - 1)]) / (ts[static_cast<std::size_t>(j)] - ts[static_cast<std::size_t>(j - 1)]);
    return (1.0 - a) * seg.points.col(j - 1) + a * seg.points.col(j);
}

/// Samples of `seg` inside [a, b], with interpolated end points.
TrajectorySegment slice(const TrajectorySegment& seg, double a, double b) {
    TrajectorySegment out;
    std::vector<Eigen::VectorXd> pts;
    out.times.push_back(a);
    pts.push_back(interpolate(seg, a));
    for (std::size_t j = 0; j < seg.times.size(); ++j) {
        const double t = seg.times[j];
        if (t > a + kTimeEps && t < b - kTimeEps) {
            out.times.push_back(t);
            pts.push_back(seg.points.col(static_cast<Eigen::Index>(j)));
        }
    }
    if (b > a + kTimeEps) {
        out.times.push_back(b);
        pts.push_back(interpolate(seg, b));
    }
    out.points.resize(seg.points.rows(), static_cast<Eigen::Index>(pts.size()));
    for (std::size_t j = 0; j < pts.size(); ++j) out.points.col(static_cast<Eigen::Index>(j)) = pts[j];
    return out;
}

double boundary_penalty(const SearchDomain& domain, const Eigen::VectorXd& s) {
    double p = 0.0;
    for (int d = 0; d < domain.dims(); ++d) {
        const double below = std::min(s[d], 0.0);
        const double above = std::max(s[d] - domain.length(d), 0.0);
        p += below * below + above * above;
    }
    return p;
}

Eigen::VectorXd boundary_gradient(const SearchDomain& domain, const Eigen::VectorXd& s) {
    Eigen::VectorXd g(domain.dims());
    for (int d = 0; d < domain.dims(); ++d) {
        g[d] = 2.0 * (std::min(s[d], 0.0) + std::max(s[d] - domain.length(d), 0.0));
    }
    return g;
}

Eigen::VectorXd lift(const Eigen::VectorXd& g_nu, const std::vector<int>& projection, Eigen::Index n) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < projection.size(); ++i) out[projection[i]] = g_nu[static_cast<Eigen::Index>(i)];
    return out;
}

/// Running average c_k(t) of the realized trajectory at the start of the
/// current step, reconstructed from the normalized history.
Eigen::VectorXd running_average(const ControllerHistory& h, const FourierBasis& basis, double horizon,
                                const CoefficientVector& partial, double t) {
    const double elapsed = t - h.t0erg;
    if (elapsed <= kTimeEps) return basis.evaluate(h.start_point);
    return partial.values * ((t + horizon - h.t0erg) / elapsed);
}

}  // namespace

Eigen::MatrixXd ControllerConfig::control_weight(int m) const {
    if (R.size() == 0) return r_scale * Eigen::MatrixXd::Identity(m, m);
    return R;
}

void ControllerConfig::validate(int m) const {
    if (!(Q > 0.0)) throw UsageError("ControllerConfig: Q must be positive");
    if (K < 0) throw UsageError("ControllerConfig: K must be non-negative");
    if (!(sample_time > 0.0) || !(horizon > sample_time)) throw UsageError("ControllerConfig: need T > t_s > 0");
    if (alpha_d && !(*alpha_d < 0.0)) throw UsageError("ControllerConfig: alpha_d must be negative");
    if (memory < 0.0) throw UsageError("ControllerConfig: memory must be non-negative");
    if (initial_duration() > horizon + kTimeEps) throw UsageError("ControllerConfig: lambda_init must not exceed T");
    if (!(shrink > 0.0 && shrink < 1.0)) throw UsageError("ControllerConfig: shrink factor must lie in (0, 1)");
    if (max_iterations < 1) throw UsageError("ControllerConfig: max_iterations must be positive");
    if (step() > sample_time + kTimeEps) throw UsageError("ControllerConfig: dt must not exceed t_s");
    if (contraction_slack < 0.0 || boundary_weight < 0.0) throw UsageError("ControllerConfig: negative slack or weight");
    const Eigen::MatrixXd r = control_weight(m);
    if (r.rows() != m || r.cols() != m) throw UsageError("ControllerConfig: R must be m x m");
    if (!r.isApprox(r.transpose(), 1e-12)) throw UsageError("ControllerConfig: R must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    if (llt.info() != Eigen::Success) throw UsageError("ControllerConfig: R must be positive definite");
}

CoefficientVector CoefficientBlend::apply(const CoefficientVector& own) const {
    CoefficientVector out(own.values * own_weight);
    if (offset.size() != 0) {
        if (offset.size() != own.values.size()) throw UsageError("CoefficientBlend: offset length mismatch");
        out.values += offset;
    }
    return out;
}

CoefficientVector HorizonObjective::own_coefficients(const StateTrajectory& x, const ControlAffineSystem& sys) const {
    const double len = t_end - t0erg;
    if (!(len > 0.0)) throw UsageError("HorizonObjective: empty window");
    const Eigen::VectorXd integral = segment_integral(explored_path(x, sys), *basis, t_start, t_end);
    return CoefficientVector(history.values + integral / len);
}

CoefficientVector HorizonObjective::combined_coefficients(const StateTrajectory& x, const ControlAffineSystem& sys) const {
    return blend.apply(own_coefficients(x, sys));
}

double HorizonObjective::ergodic_cost(const CoefficientVector& combined) const {
    return Q * ergodic_metric(combined, phi, *basis);
}

double HorizonObjective::cost(const StateTrajectory& x, const ControlAffineSystem& sys) const {
    double j = ergodic_cost(combined_coefficients(x, sys));
    if (boundary_weight > 0.0) {
        double acc = 0.0;
        double prev = boundary_penalty(basis->domain(), sys.project(x.states.col(0)));
        for (std::size_t k = 1; k < x.samples(); ++k) {
            const double cur = boundary_penalty(basis->domain(), sys.project(x.states.col(static_cast<Eigen::Index>(k))));
            acc += 0.5 * (prev + cur) * (x.times[k] - x.times[k - 1]);
            prev = cur;
        }
        j += boundary_weight * acc;
    }
    return j;
}

Eigen::VectorXd running_grad(const FourierBasis& basis, const CoefficientVector& c_now, const CoefficientVector& phi,
                             double Q, const TimeWindow& window, const Eigen::VectorXd& x,
                             const std::vector<int>& projection, double own_weight) {
    if (!(window.length() > 0.0)) throw UsageError("running_grad: window length must be positive");
    if (c_now.size() != basis.size() || phi.size() != basis.size()) throw UsageError("running_grad: coefficient length mismatch");
    Eigen::VectorXd s(static_cast<Eigen::Index>(projection.size()));
    for (std::size_t i = 0; i < projection.size(); ++i) s[static_cast<Eigen::Index>(i)] = x[projection[i]];
    const Eigen::VectorXd w = basis.weights().cwiseProduct(c_now.values - phi.values);
    const Eigen::VectorXd g = basis.weighted_gradient(s, w) * (2.0 * Q * own_weight / window.length());
    return lift(g, projection, x.size());
}

CostateTrajectory integrate_costate(const ControlAffineSystem& sys, const StateTrajectory& x_def, const ForcingFn& forcing) {
    const auto n_samples = static_cast<Eigen::Index>(x_def.samples());
    if (n_samples < 2) throw UsageError("integrate_costate: rollout needs at least two samples");
    CostateTrajectory rho;
    rho.times = x_def.times;
    rho.values = Eigen::MatrixXd::Zero(sys.n, n_samples);

    Eigen::VectorXd r = Eigen::VectorXd::Zero(sys.n);
    Eigen::VectorXd l_next = forcing(x_def.times.back(), x_def.states.col(n_samples - 1));
    for (Eigen::Index j = n_samples - 2; j >= 0; --j) {
        const double t_hi = x_def.times[static_cast<std::size_t>(j + 1)];
        const double t_lo = x_def.times[static_cast<std::size_t>(j)];
        const double t_mid = 0.5 * (t_lo + t_hi);
        const double h = t_lo - t_hi;
        const Eigen::VectorXd u = x_def.controls.col(j);
        const Eigen::VectorXd x_hi = x_def.states.col(j + 1);
        const Eigen::VectorXd x_lo = x_def.states.col(j);
        const Eigen::VectorXd x_mid = 0.5 * (x_lo + x_hi);

        const Eigen::MatrixXd a_hi = linearize(sys, t_hi, x_hi, u).transpose();
        const Eigen::MatrixXd a_mid = linearize(sys, t_mid, x_mid, u).transpose();
        const Eigen::MatrixXd a_lo = linearize(sys, t_lo, x_lo, u).transpose();
        const Eigen::VectorXd l_mid = forcing(t_mid, x_mid);
        const Eigen::VectorXd l_lo = forcing(t_lo, x_lo);

        const Eigen::VectorXd k1 = -l_next - a_hi * r;
        const Eigen::VectorXd k2 = -l_mid - a_mid * (r + 0.5 * h * k1);
        const Eigen::VectorXd k3 = -l_mid - a_mid * (r + 0.5 * h * k2);
        const Eigen::VectorXd k4 = -l_lo - a_lo * (r + h * k3);
        r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        rho.values.col(j) = r;
        l_next = l_lo;
    }
    return rho;
}

CostateTrajectory integrate_costate(const ControlAffineSystem& sys, const StateTrajectory& x_def,
                                    const HorizonObjective& objective) {
    const CoefficientVector combined = objective.combined_coefficients(x_def, sys);
    const TimeWindow window{objective.t0erg, objective.t_end};
    const FourierBasis& basis = *objective.basis;
    const double own_weight = objective.blend.own_weight;
    const double wb = objective.boundary_weight;
    return integrate_costate(sys, x_def, [&](double, const Eigen::VectorXd& x) {
        Eigen::VectorXd l = running_grad(basis, combined, objective.phi, objective.Q, window, x, sys.ergodic_projection, own_weight);
        if (wb > 0.0) l += lift(wb * boundary_gradient(basis.domain(), sys.project(x)), sys.ergodic_projection, sys.n);
        return l;
    });
}

double mode_insertion_gradient(const Eigen::VectorXd& rho, const ControlAffineSystem& sys, double t,
                               const Eigen::VectorXd& x, const Eigen::VectorXd& u_candidate,
                               const Eigen::VectorXd& u_default) {
    return rho.dot(sys.input_map(t, x) * (u_candidate - u_default));
}

double schedule_integrand(const Eigen::VectorXd& rho, const Eigen::MatrixXd& h, const Eigen::VectorXd& u,
                          const Eigen::VectorXd& u_default, double alpha_d, const Eigen::MatrixXd& R) {
    const double gap = rho.dot(h * (u - u_default)) - alpha_d;
    return 0.5 * gap * gap + 0.5 * u.dot(R * u);
}

ActionSchedule action_schedule(const CostateTrajectory& rho, const StateTrajectory& x_def, const ControlAffineSystem& sys,
                               const Eigen::MatrixXd& R, double alpha_d) {
    const auto n_samples = static_cast<Eigen::Index>(x_def.samples());
    if (rho.values.cols() != n_samples) throw UsageError("action_schedule: costate and rollout grids differ");
    ActionSchedule s;
    s.times = x_def.times;
    s.raw.resize(sys.m, n_samples);
    s.saturated.resize(sys.m, n_samples);
    for (Eigen::Index j = 0; j < n_samples; ++j) {
        const double t = x_def.times[static_cast<std::size_t>(j)];
        const Eigen::MatrixXd h = sys.input_map(t, x_def.states.col(j));
        const Eigen::VectorXd b = h.transpose() * rho.values.col(j);
        const Eigen::MatrixXd lam = b * b.transpose();
        const Eigen::VectorXd rhs = lam * x_def.controls.col(j) + b * alpha_d;
        const Eigen::MatrixXd lhs = lam + R.transpose();
        s.raw.col(j) = lhs.partialPivLu().solve(rhs);
        s.saturated.col(j) = saturate(s.raw.col(j), sys.u_min, sys.u_max);
    }
    return s;
}

std::optional<ActionCandidate> application_time(const ActionSchedule& schedule, const CostateTrajectory& rho,
                                                const StateTrajectory& x_def, const ControlAffineSystem& sys,
                                                double t_begin, double t_end) {
    std::optional<ActionCandidate> best;
    for (std::size_t j = 0; j < x_def.samples(); ++j) {
        const double t = x_def.times[j];
        if (t < t_begin - kTimeEps || t >= t_end - kTimeEps) continue;
        const auto col = static_cast<Eigen::Index>(j);
        const Eigen::VectorXd u = schedule.saturated.col(col);
        const double jt = mode_insertion_gradient(rho.values.col(col), sys, t, x_def.states.col(col), u, x_def.controls.col(col));
        if (!std::isfinite(jt)) continue;
        if (!best || jt < best->sensitivity) best = ActionCandidate{t, j, u, jt};
    }
    if (!best || !(best->sensitivity < 0.0)) return std::nullopt;
    return best;
}

double running_cost(const FourierBasis& basis, const CoefficientVector& phi, double Q, const CoefficientBlend& blend,
                    const CoefficientVector& running_average) {
    return Q * ergodic_metric(blend.apply(running_average), phi, basis);
}

double contraction_rate(const FourierBasis& basis, const CoefficientVector& phi, double Q, const CoefficientBlend& blend,
                        double t0erg, double t, const Eigen::VectorXd& running_integral, const Eigen::VectorXd& f_now) {
    const double elapsed = t - t0erg;
    if (elapsed <= kTimeEps) return 0.0;
    const Eigen::VectorXd c = running_integral / elapsed;
    const Eigen::VectorXd residual = blend.apply(CoefficientVector(c)).values - phi.values;
    return 2.0 * Q * blend.own_weight / elapsed * basis.weights().cwiseProduct(residual).dot(f_now - c);
}

double contraction_integral(const FourierBasis& basis, const CoefficientVector& phi, double Q, const CoefficientBlend& blend,
                            double t0erg, const Eigen::VectorXd& base_integral, const TrajectorySegment& path) {
    if (path.times.size() < 2) return 0.0;
    Eigen::VectorXd integral = base_integral;
    Eigen::VectorXd f_prev = basis.evaluate(path.points.col(0));
    double rate_prev = contraction_rate(basis, phi, Q, blend, t0erg, path.times[0], integral, f_prev);
    double total = 0.0;
    for (std::size_t j = 1; j < path.times.size(); ++j) {
        const double dt = path.times[j] - path.times[j - 1];
        const Eigen::VectorXd f_now = basis.evaluate(path.points.col(static_cast<Eigen::Index>(j)));
        integral += 0.5 * dt * (f_prev + f_now);
        const double rate = contraction_rate(basis, phi, Q, blend, t0erg, path.times[j], integral, f_now);
        total += 0.5 * dt * (rate_prev + rate);
        rate_prev = rate;
        f_prev = f_now;
    }
    return total;
}

LineSearchResult duration_line_search(const ActionCandidate& candidate, const ControlSignal& u_default,
                                      double cost_default, const ControllerConfig& cfg, double horizon_end,
                                      const ContractionTest& test, const RolloutFn& rollout) {
    LineSearchResult out;
    out.action.value = candidate.value;
    out.action.application_time = candidate.time;
    out.cost = cost_default;
    const double dt = cfg.step();
    double lambda = cfg.initial_duration();
    double last_tried = -1.0;
    for (int j = 0; j < cfg.max_iterations; ++j, lambda *= cfg.shrink) {
        double snapped = std::max(1.0, std::round(lambda / dt)) * dt;
        snapped = std::min(snapped, horizon_end - candidate.time);
        if (snapped <= kTimeEps || std::abs(snapped - last_tried) < kTimeEps) continue;
        last_tried = snapped;
        ++out.iterations;

        ControlSignal trial = u_default;
        trial.insert(Action{candidate.value, candidate.time, snapped});
        const auto result = rollout(trial);
        if (!result) continue;
        const double cost = result->second;
        if (std::isfinite(cost) && cost < cost_default && test.satisfied(cost)) {
            out.action.duration = snapped;
            out.cost = cost;
            out.trajectory = result->first;
            return out;
        }
    }
    return out;
}

std::pair<ControlSignal, StepResult> solve_open_loop(double t_i, const Eigen::VectorXd& x_i, const ControllerHistory& history,
                                                     const CoefficientVector& phi, const ControlAffineSystem& sys,
                                                     const FourierBasis& basis, const ControllerConfig& cfg,
                                                     const CoefficientBlend& blend) {
    auto sol = detail::solve_step(t_i, x_i, history, phi, sys, basis, cfg, blend);
    return {std::move(sol.plan), std::move(sol.result)};
}

namespace detail {

OpenLoopSolution solve_step(double t_i, const Eigen::VectorXd& x_i, const ControllerHistory& history,
                            const CoefficientVector& phi, const ControlAffineSystem& sys, const FourierBasis& basis,
                            const ControllerConfig& cfg, const CoefficientBlend& blend) {
    const auto wall_start = std::chrono::steady_clock::now();
    const double dt = cfg.step();
    const double t_end = t_i + cfg.horizon;

    OpenLoopSolution sol;
    StepResult& r = sol.result;
    r.step = history.step;
    r.time = t_i;
    r.state = x_i;
    r.previous_cost = kNaN;
    r.contraction_rhs = kNaN;
    r.contraction_bound = kNaN;
    r.action.value = Eigen::VectorXd::Zero(sys.m);
    r.action.application_time = t_i;

    sol.plan = history.plan;
    sol.plan.drop_before(t_i);
    const ControlSignal u_def = sol.plan;

    HorizonObjective obj;
    obj.basis = &basis;
    obj.phi = phi;
    obj.Q = cfg.Q;
    obj.t0erg = history.t0erg;
    obj.t_start = t_i;
    obj.t_end = t_end;
    obj.history = history.partial;
    obj.blend = blend;
    obj.boundary_weight = cfg.boundary_weight;

    auto finish = [&](std::string reason) {
        r.fallback = std::move(reason);
        r.applied_control = sol.plan(t_i, x_i);
        r.wall_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - wall_start).count();
        return sol;
    };

    StateTrajectory x_def;
    try {
        x_def = integrate(sys, x_i, t_i, t_end, u_def, dt);
    } catch (const IntegrationDiverged&) {
        sol.planned = history.partial;
        r.cost_before = r.cost_after = kNaN;
        return finish("default rollout diverged");
    }
    sol.planned = obj.own_coefficients(x_def, sys);
    const double j_def = obj.cost(x_def, sys);
    r.cost_before = j_def;
    r.cost_after = j_def;

    ContractionTest test;
    if (history.step > 0 && history.previous_cost) {
        const Eigen::VectorXd c_now = running_average(history, basis, cfg.horizon, history.partial, t_i);
        const Eigen::VectorXd c_prev = running_average(history, basis, cfg.horizon, history.prev_partial, history.t_prev);
        const double b_now = running_cost(basis, phi, cfg.Q, blend, CoefficientVector(c_now));
        const double b_prev = running_cost(basis, phi, cfg.Q, blend, CoefficientVector(c_prev));
        r.previous_cost = *history.previous_cost;
        r.contraction_rhs = -(b_now - b_prev);
        r.constrained = true;
        test.active = true;
        test.reference_cost = *history.previous_cost;
        test.allowed_change = r.contraction_rhs;
        test.slack = cfg.contraction_slack * std::max(std::abs(*history.previous_cost), std::abs(j_def));

        const double a = history.t_prev + cfg.horizon;
        const Eigen::VectorXd base =
            history.partial.values * (t_end - history.t0erg) +
            segment_integral(explored_path(x_def, sys), basis, t_i, std::max(t_i, std::min(a, t_end)));
        r.contraction_bound = contraction_integral(basis, phi, cfg.Q, blend, history.t0erg, base,
                                                   slice(explored_path(x_def, sys), a, t_end));
    }

    const CostateTrajectory rho = integrate_costate(sys, x_def, obj);
    if (!rho.values.allFinite()) return finish("costate non-finite");

    const double alpha = cfg.alpha_d ? *cfg.alpha_d : -j_def / cfg.horizon;
    r.alpha_d = alpha;
    if (!(alpha < 0.0)) return finish("no improving action");

    const ActionSchedule schedule = action_schedule(rho, x_def, sys, cfg.control_weight(sys.m), alpha);
    const auto candidate = application_time(schedule, rho, x_def, sys, t_i, t_end);
    if (!candidate) return finish("no improving action");

    const auto rollout = [&](const ControlSignal& u) -> std::optional<std::pair<StateTrajectory, double>> {
        try {
            StateTrajectory x = integrate(sys, x_i, t_i, t_end, u, dt);
            const double j = obj.cost(x, sys);
            return std::make_pair(std::move(x), j);
        } catch (const IntegrationDiverged&) {
            return std::nullopt;
        }
    };
    const LineSearchResult ls = duration_line_search(*candidate, u_def, j_def, cfg, t_end, test, rollout);
    r.line_search_iterations = ls.iterations;
    if (ls.action.empty()) {
        r.contraction_ok = !test.active || test.satisfied(j_def);
        r.action.value = candidate->value;
        r.action.application_time = candidate->time;
        return finish("line search exhausted");
    }
    r.action = ls.action;
    r.cost_after = ls.cost;
    sol.plan.insert(ls.action);
    sol.planned = obj.own_coefficients(*ls.trajectory, sys);
    return finish("");
}

}  // namespace detail

ErgodicController::ErgodicController(ControlAffineSystem sys, FourierBasis basis, ControllerConfig cfg, NominalControl nominal)
    : sys_(std::move(sys)), basis_(std::move(basis)), cfg_(std::move(cfg)), nominal_(std::move(nominal)) {
    sys_.validate();
    cfg_.validate(sys_.m);
    if (!nominal_) throw UsageError("ErgodicController: nominal control is required");
    if (basis_.order() != cfg_.K) throw UsageError("ErgodicController: basis order differs from K");
    if (basis_.dims() != sys_.ergodic_dims()) throw UsageError("ErgodicController: basis and projection dimensions differ");
    R_ = cfg_.control_weight(sys_.m);
}

void ErgodicController::reset(double t_start, const Eigen::VectorXd& x, double t0erg, CoefficientVector phi,
                              std::optional<Eigen::VectorXd> history_integral) {
    if (phi.size() != basis_.size()) throw UsageError("ErgodicController: phi has the wrong length");
    if (x.size() != sys_.n) throw UsageError("ErgodicController: state has the wrong dimension");
    if (t0erg > t_start + kTimeEps) throw UsageError("ErgodicController: t0erg must not follow the start time");
    phi_ = std::move(phi);
    hist_.step = 0;
    hist_.t_run_start = t_start;
    hist_.t0erg = t0erg;
    hist_.t_prev = t_start;
    hist_.t_curr = t_start;
    if (history_integral) {
        if (history_integral->size() != static_cast<Eigen::Index>(basis_.size())) {
            throw UsageError("ErgodicController: history integral has the wrong length");
        }
        hist_.partial = CoefficientVector(*history_integral / (t_start + cfg_.horizon - t0erg));
    } else {
        hist_.partial = CoefficientVector::zeros(basis_.size());
    }
    hist_.prev_partial = hist_.partial;
    hist_.start_point = sys_.project(x);
    hist_.previous_cost.reset();
    hist_.plan = ControlSignal(nominal_, sys_.u_min, sys_.u_max);
    planned_ = hist_.partial;
}

StepResult ErgodicController::solve(double t_i, const Eigen::VectorXd& x_i) {
    if (phi_.size() == 0) throw UsageError("ErgodicController: reset must be called before solve");
    if (std::abs(t_i - hist_.t_curr) > 1e-6) throw UsageError("ErgodicController: solve time does not match the controller clock");
    auto sol = detail::solve_step(t_i, x_i, hist_, phi_, sys_, basis_, cfg_, blend_);
    hist_.plan = std::move(sol.plan);
    hist_.previous_cost = sol.result.cost_after;
    planned_ = std::move(sol.planned);
    return std::move(sol.result);
}

StateTrajectory ErgodicController::apply(const Eigen::VectorXd& x_i) {
    const double t_i = hist_.t_curr;
    const double t_next = hist_.t_run_start + static_cast<double>(hist_.step + 1) * cfg_.sample_time;
    StateTrajectory applied = integrate(sys_, x_i, t_i, t_next, hist_.plan, cfg_.step());
    const Eigen::VectorXd integral = segment_integral(explored_path(applied, sys_), basis_, t_i, t_next);
    hist_.prev_partial = hist_.partial;
    hist_.partial = recursive_coeff_update(hist_.partial, RecursionWindow{t_i, t_next, cfg_.horizon, hist_.t0erg}, integral);
    hist_.t_prev = t_i;
    hist_.t_curr = t_next;
    ++hist_.step;
    return applied;
}

void ErgodicController::mirror_plan(const std::vector<int>& dims) {
    if (dims.empty() || !sys_.walls) return;
    hist_.plan.transform_actions([&](Eigen::VectorXd& u) {
        for (int d : dims) sys_.walls->control(u, d);
    });
}

void contain_in_domain(ErgodicController& controller, StateTrajectory& applied) {
    const auto& sys = controller.system();
    if (!sys.walls) return;
    const auto& bounds = controller.basis().domain().bounds();
    std::vector<int> flips;
    for (Eigen::Index j = 0; j < applied.states.cols(); ++j) {
        Eigen::VectorXd x = applied.states.col(j);
        flips = reflect_into_domain(sys, bounds, x);
        applied.states.col(j) = x;
        Eigen::VectorXd u = applied.controls.col(j);
        for (int d : flips) sys.walls->control(u, d);
        applied.controls.col(j) = u;
    }
    controller.mirror_plan(flips);
}

std::size_t ErgodicController::persisted_size() const {
    std::size_t doubles = hist_.partial.size() + hist_.prev_partial.size() + static_cast<std::size_t>(hist_.start_point.size());
    doubles += 6;  // step, clocks, previous cost
    for (const auto& a : hist_.plan.actions()) doubles += static_cast<std::size_t>(a.value.size()) + 2;
    return doubles;
}

HorizonObjective ErgodicController::objective(double t_i) const {
    HorizonObjective obj;
    obj.basis = &basis_;
    obj.phi = phi_;
    obj.Q = cfg_.Q;
    obj.t0erg = hist_.t0erg;
    obj.t_start = t_i;
    obj.t_end = t_i + cfg_.horizon;
    obj.history = hist_.partial;
    obj.blend = blend_;
    obj.boundary_weight = cfg_.boundary_weight;
    return obj;
}

double ErgodicController::realized_metric() const {
    const Eigen::VectorXd c = running_average(hist_, basis_, cfg_.horizon, hist_.partial, hist_.t_curr);
    return ergodic_metric(CoefficientVector(c), phi_, basis_);
}

CoefficientVector ErgodicController::realized_coefficients() const {
    return CoefficientVector(running_average(hist_, basis_, cfg_.horizon, hist_.partial, hist_.t_curr));
}

void TrailBuffer::append(const StateTrajectory& applied, const ControlAffineSystem& sys) {
    for (std::size_t j = 0; j < applied.samples(); ++j) {
        const double t = applied.times[j];
        if (!times_.empty() && t <= times_.back() + kTimeEps) continue;
        times_.push_back(t);
        points_.push_back(sys.project(applied.states.col(static_cast<Eigen::Index>(j))));
    }
}

void TrailBuffer::trim_before(double t) {
    std::size_t keep_from = 0;
    while (keep_from + 1 < times_.size() && times_[keep_from + 1] <= t) ++keep_from;
    times_.erase(times_.begin(), times_.begin() + static_cast<std::ptrdiff_t>(keep_from));
    points_.erase(points_.begin(), points_.begin() + static_cast<std::ptrdiff_t>(keep_from));
}

std::optional<double> TrailBuffer::earliest() const {
    if (times_.empty()) return std::nullopt;
    return times_.front();
}

Eigen::VectorXd TrailBuffer::integral(const FourierBasis& basis, double t_begin, double t_end) const {
    if (times_.size() < 2) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
    const double a = std::max(t_begin, times_.front());
    const double b = std::min(t_end, times_.back());
    if (b <= a) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
    TrajectorySegment seg;
    seg.times.assign(times_.begin(), times_.end());
    seg.points.resize(static_cast<Eigen::Index>(points_.front().size()), static_cast<Eigen::Index>(points_.size()));
    for (std::size_t j = 0; j < points_.size(); ++j) seg.points.col(static_cast<Eigen::Index>(j)) = points_[j];
    return segment_integral(seg, basis, a, b);
}

void restart_with_memory(ErgodicController& controller, double t, const Eigen::VectorXd& x, CoefficientVector phi,
                         const TrailBuffer& trail, double memory) {
    const auto earliest = trail.earliest();
    double t0erg = t - memory;
    if (earliest) t0erg = std::max(t0erg, *earliest);
    if (memory <= 0.0 || !earliest || t0erg >= t - kTimeEps) {
        controller.reset(t, x, t, std::move(phi));
        return;
    }
    controller.reset(t, x, t0erg, std::move(phi), trail.integral(controller.basis(), t0erg, t));
}

namespace {

void append_applied(StateTrajectory& into, const StateTrajectory& applied) {
    const std::size_t skip = into.samples() == 0 ? 0 : 1;
    const std::size_t add = applied.samples() - skip;
    const auto old_cols = static_cast<Eigen::Index>(into.samples());
    const auto new_cols = old_cols + static_cast<Eigen::Index>(add);
    into.states.conservativeResize(applied.states.rows(), new_cols);
    into.controls.conservativeResize(applied.controls.rows(), new_cols);
    if (old_cols > 0) into.controls.col(old_cols - 1) = applied.controls.col(0);
    for (std::size_t j = 0; j < add; ++j) {
        const auto src = static_cast<Eigen::Index>(j + skip);
        const auto dst = old_cols + static_cast<Eigen::Index>(j);
        into.times.push_back(applied.times[static_cast<std::size_t>(src)]);
        into.states.col(dst) = applied.states.col(src);
        into.controls.col(dst) = applied.controls.col(src);
    }
}

std::int64_t step_count(double t0, double tf, double ts) {
    return static_cast<std::int64_t>(std::llround(std::max(0.0, (tf - t0) / ts)));
}

}  // namespace

ClosedLoopRun rhee_run(double t0, const Eigen::VectorXd& x0, const CoefficientVector& phi, double t0erg, double tf,
                       const ControlAffineSystem& sys, const FourierBasis& basis, const ControllerConfig& cfg,
                       const NominalControl& u_nom) {
    if (!(tf > t0)) throw UsageError("rhee_run: tf must exceed t0");
    ErgodicController ctl(sys, basis, cfg, u_nom);
    ctl.reset(t0, x0, t0erg, phi);
    ClosedLoopRun run;
    Eigen::VectorXd x = x0;
    const auto steps = step_count(t0, tf, cfg.sample_time);
    for (std::int64_t i = 0; i < steps; ++i) {
        run.steps.push_back(ctl.solve(ctl.time(), x));
        StateTrajectory applied;
        try {
            applied = ctl.apply(x);
        } catch (const IntegrationDiverged&) {
            run.steps.back().fallback = "closed loop diverged";
            break;
        }
        contain_in_domain(ctl, applied);
        append_applied(run.trajectory, applied);
        x = applied.final_state();
        run.metric_series.emplace_back(ctl.time(), ctl.realized_metric());
    }
    return run;
}

ClosedLoopRun reactive_run(double t0, const Eigen::VectorXd& x0, double tf, double t_phi, const PhiSource& phi_source,
                           const ControlAffineSystem& sys, const FourierBasis& basis, const ControllerConfig& cfg,
                           const NominalControl& u_nom) {
    if (!(tf > t0)) throw UsageError("reactive_run: tf must exceed t0");
    if (t_phi < cfg.sample_time - kTimeEps) throw UsageError("reactive_run: t_phi must be at least t_s");
    ErgodicController ctl(sys, basis, cfg, u_nom);
    TrailBuffer trail;
    ClosedLoopRun run;
    Eigen::VectorXd x = x0;
    double next_update = t0;
    bool started = false;
    const auto steps = step_count(t0, tf, cfg.sample_time);
    for (std::int64_t i = 0; i < steps; ++i) {
        const double t = started ? ctl.time() : t0;
        if (t >= next_update - 1e-6) {
            CoefficientVector phi = phi_source(t, x);
            if (!started) {
                ctl.reset(t0, x, t0, std::move(phi));
                started = true;
            } else {
                restart_with_memory(ctl, t, x, std::move(phi), trail, cfg.memory);
            }
            next_update += t_phi;
        }
        run.steps.push_back(ctl.solve(ctl.time(), x));
        StateTrajectory applied;
        try {
            applied = ctl.apply(x);
        } catch (const IntegrationDiverged&) {
            run.steps.back().fallback = "closed loop diverged";
            break;
        }
        contain_in_domain(ctl, applied);
        trail.append(applied, sys);
        trail.trim_before(ctl.time() - cfg.memory - cfg.sample_time);
        append_applied(run.trajectory, applied);
        x = applied.final_state();
        run.metric_series.emplace_back(ctl.time(), ctl.realized_metric());
    }
    return run;
}

}  // namespace rhee
