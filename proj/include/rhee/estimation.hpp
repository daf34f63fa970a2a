#pragma once

// Bearing-only EKF target beliefs, range gating and the detection lifecycle.

#include "rhee/information.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace rhee {

/// Ground-truth target. `path` must be defined on the scenario window.
struct TargetTruth {
    int id = 0;
    std::function<Eigen::VectorXd(double)> path;
    double appear_time = 0.0;
    std::uint64_t motion_seed = 0;

    Eigen::VectorXd position(double t) const { return path(t); }
    bool present(double t) const { return t >= appear_time; }
};

TargetTruth static_target(int id, Eigen::VectorXd position, double appear_time = 0.0);

/// Piecewise-linear through (times[j], points.col(j)), held constant outside.
TargetTruth waypoint_target(int id, std::vector<double> times, Eigen::MatrixXd points, double appear_time = 0.0);

/// Gaussian random walk sampled every `dt` on [t0, tf], linearly interpolated
/// and folded back into the box [0, bounds] on the planar coordinates.
TargetTruth diffusion_target(int id, const Eigen::VectorXd& start, double sigma, double dt, double t0, double tf,
                             const std::vector<double>& bounds, std::uint64_t seed, double appear_time = 0.0);

/// Identity transition: covariance += process_cov.
TargetBelief ekf_predict(const TargetBelief& belief, const Eigen::MatrixXd& process_cov);

struct EkfUpdate {
    TargetBelief belief;
    bool skipped = false;  // innovation covariance near-singular, belief untouched
};

EkfUpdate ekf_update(const TargetBelief& belief, const MeasurementModel& model, const Eigen::VectorXd& sensor,
                     const Eigen::VectorXd& z);

/// Wraps to (-pi, pi].
double wrap_angle(double a);

/// Planar distance strictly below r.
bool range_gate(const Eigen::VectorXd& sensor, const Eigen::VectorXd& target, double r);

struct Measurement {
    int target_id = 0;
    double time = 0.0;
    Eigen::VectorXd z;
};

struct SensingResult {
    std::vector<Measurement> measurements;
    std::vector<int> new_detections;
};

/// Belief initialized from a first bearing: the sensor position offset by
/// half the sensor range back along the measured azimuth.
TargetBelief initial_belief(int id, const Eigen::VectorXd& sensor, const Eigen::VectorXd& z, double r, int params,
                            double sigma_init = 0.1);

/// One sensing tick. beliefs and rngs are aligned with truths; undetected
/// in-range targets are initialized in place, one noisy measurement per
/// in-range present target.
SensingResult detect_and_measure(const std::vector<TargetTruth>& truths, std::vector<TargetBelief>& beliefs,
                                 const Eigen::VectorXd& sensor, const MeasurementModel& model, double r,
                                 std::vector<std::mt19937_64>& rngs, double t, double sigma_init = 0.1);

/// Draws predict(alpha, sensor) + N(0, noise_cov).
Eigen::VectorXd sample_measurement(const MeasurementModel& model, const Eigen::VectorXd& alpha, const Eigen::VectorXd& sensor,
                                   std::mt19937_64& rng);

/// ||mean - truth|| < threshold on a detected belief.
bool localization_status(const TargetBelief& belief, const Eigen::VectorXd& truth, double threshold = 0.05);

}  // namespace rhee
