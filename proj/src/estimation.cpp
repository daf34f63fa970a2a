#include "rhee/estimation.hpp"

#include "rhee/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rhee {

namespace {

constexpr double kSingularInnovation = 1e-12;

double fold(double v, double hi) {
    double period = 2.0 * hi;
    double m = std::fmod(v, period);
    if (m < 0.0) m += period;
    return m > hi ? period - m : m;
}

}  // namespace

TargetTruth static_target(int id, Eigen::VectorXd position, double appear_time) {
    TargetTruth t;
    t.id = id;
    t.appear_time = appear_time;
    t.path = [p = std::move(position)](double) { return p; };
    return t;
}

TargetTruth waypoint_target(int id, std::vector<double> times, Eigen::MatrixXd points, double appear_time) {
    if (times.empty() || static_cast<Eigen::Index>(times.size()) != points.cols())
        throw UsageError("waypoints need one time per point");
    if (!std::is_sorted(times.begin(), times.end())) throw UsageError("waypoint times must be sorted");
    TargetTruth t;
    t.id = id;
    t.appear_time = appear_time;
    t.path = [times = std::move(times), points = std::move(points)](double s) -> Eigen::VectorXd {
        if (s <= times.front()) return points.col(0);
        if (s >= times.back()) return points.col(points.cols() - 1);
        auto it = std::upper_bound(times.begin(), times.end(), s);
        auto j = static_cast<Eigen::Index>(it - times.begin());
        double w = (s - times[j - 1]) / (times[j] - times[j - 1]);
        return (1.0 - w) * points.col(j - 1) + w * points.col(j);
    };
    return t;
}

TargetTruth diffusion_target(int id, const Eigen::VectorXd& start, double sigma, double dt, double t0, double tf,
                             const std::vector<double>& bounds, std::uint64_t seed, double appear_time) {
    if (!(dt > 0.0) || tf < t0 || sigma < 0.0) throw UsageError("diffusion target needs dt > 0, tf >= t0, sigma >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    auto steps = static_cast<Eigen::Index>(std::ceil((tf - t0) / dt)) + 1;
    std::vector<double> times;
    Eigen::MatrixXd points(start.size(), steps);
    Eigen::VectorXd x = start;
    for (Eigen::Index j = 0; j < steps; ++j) {
        times.push_back(t0 + static_cast<double>(j) * dt);
        points.col(j) = x;
        for (Eigen::Index d = 0; d < x.size(); ++d) {
            x[d] += sigma * std::sqrt(dt) * n01(rng);
            if (static_cast<std::size_t>(d) < bounds.size()) x[d] = fold(x[d], bounds[static_cast<std::size_t>(d)]);
        }
    }
    TargetTruth t = waypoint_target(id, std::move(times), std::move(points), appear_time);
    t.motion_seed = seed;
    return t;
}

TargetBelief ekf_predict(const TargetBelief& belief, const Eigen::MatrixXd& process_cov) {
    if (process_cov.rows() != belief.covariance.rows() || process_cov.cols() != belief.covariance.cols())
        throw UsageError("process covariance must match the belief");
    TargetBelief out = belief;
    out.covariance += process_cov;
    return out;
}

double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::remainder(a, two_pi);
    return w <= -std::numbers::pi ? w + two_pi : w;
}

EkfUpdate ekf_update(const TargetBelief& belief, const MeasurementModel& model, const Eigen::VectorXd& sensor,
                     const Eigen::VectorXd& z) {
    if (belief.mean.size() != model.params() || z.size() != model.outputs())
        throw UsageError("belief or measurement dimension does not match the model");
    EkfUpdate out{belief, false};
    Eigen::MatrixXd H;
    Eigen::VectorXd innovation;
    try {
        H = model.jacobian(belief.mean, sensor);
        innovation = z - model.predict(belief.mean, sensor);
    } catch (const ModelSingular&) {
        out.skipped = true;
        return out;
    }
    for (int i = 0; i < model.outputs(); ++i)
        if (model.angular()[static_cast<std::size_t>(i)]) innovation[i] = wrap_angle(innovation[i]);

    const Eigen::MatrixXd& P = belief.covariance;
    Eigen::MatrixXd S = H * P * H.transpose() + model.noise_cov();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    double scale = std::max(S.cwiseAbs().maxCoeff(), 1.0);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() < kSingularInnovation * scale).any()) {
        out.skipped = true;
        return out;
    }
    Eigen::MatrixXd gain = ldlt.solve(H * P).transpose();
    out.belief.mean = belief.mean + gain * innovation;
    Eigen::MatrixXd posterior = P - gain * S * gain.transpose();
    out.belief.covariance = 0.5 * (posterior + posterior.transpose());
    return out;
}

bool range_gate(const Eigen::VectorXd& sensor, const Eigen::VectorXd& target, double r) {
    return std::hypot(sensor[0] - target[0], sensor[1] - target[1]) < r;
}

TargetBelief initial_belief(int id, const Eigen::VectorXd& sensor, const Eigen::VectorXd& z, double r, int params,
                            double sigma_init) {
    TargetBelief b;
    b.id = id;
    b.detected = true;
    b.mean = Eigen::VectorXd::Zero(params);
    double az = z[0];
    b.mean[0] = sensor[0] - 0.5 * r * std::sin(az);
    b.mean[1] = sensor[1] - 0.5 * r * std::cos(az);
    if (params > 2 && z.size() > 1 && sensor.size() > 2) b.mean[2] = sensor[2] - 0.5 * r * std::tan(z[1]);
    b.covariance = Eigen::MatrixXd::Identity(params, params) * sigma_init * sigma_init;
    return b;
}

Eigen::VectorXd sample_measurement(const MeasurementModel& model, const Eigen::VectorXd& alpha, const Eigen::VectorXd& sensor,
                                   std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Eigen::VectorXd noise(model.outputs());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = n01(rng);
    return model.predict(alpha, sensor) + model.noise_factor() * noise;
}

SensingResult detect_and_measure(const std::vector<TargetTruth>& truths, std::vector<TargetBelief>& beliefs,
                                 const Eigen::VectorXd& sensor, const MeasurementModel& model, double r,
                                 std::vector<std::mt19937_64>& rngs, double t, double sigma_init) {
    if (beliefs.size() != truths.size() || rngs.size() != truths.size())
        throw UsageError("beliefs and rng streams must align with truths");
    SensingResult result;
    for (std::size_t j = 0; j < truths.size(); ++j) {
        const TargetTruth& truth = truths[j];
        if (!truth.present(t)) continue;
        Eigen::VectorXd alpha = truth.position(t);
        if (!range_gate(sensor, alpha, r)) continue;
        Eigen::VectorXd z;
        try {
            z = sample_measurement(model, alpha, sensor, rngs[j]);
        } catch (const ModelSingular&) {
            continue;
        }
        if (!beliefs[j].detected) {
            beliefs[j] = initial_belief(truth.id, sensor, z, r, model.params(), sigma_init);
            result.new_detections.push_back(truth.id);
        }
        result.measurements.push_back({truth.id, t, z});
    }
    return result;
}

bool localization_status(const TargetBelief& belief, const Eigen::VectorXd& truth, double threshold) {
    if (!belief.detected) return false;
    return (belief.mean - truth).norm() < threshold;
}

}  // namespace rhee
