#pragma once

// Fisher-information based expected information density (EID) maps.

#include "rhee/fourier.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <vector>

namespace rhee {

/// Gaussian belief over one target's parameters.
struct TargetBelief {
    int id = 0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    bool detected = false;
};

/// z = predict(alpha, sensor) + noise, noise ~ N(0, noise_cov).
class MeasurementModel {
public:
    using PredictFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
    using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

    /// Throws UsageError unless noise_cov is symmetric positive definite.
    MeasurementModel(int params, int outputs, PredictFn predict, JacobianFn jacobian, Eigen::MatrixXd noise_cov,
                     std::vector<bool> angular);

    int params() const { return params_; }
    int outputs() const { return outputs_; }
    /// Throws ModelSingular where the measurement is undefined.
    Eigen::VectorXd predict(const Eigen::VectorXd& alpha, const Eigen::VectorXd& sensor) const { return predict_(alpha, sensor); }
    /// d predict / d alpha (outputs x params). Throws ModelSingular where undefined.
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& alpha, const Eigen::VectorXd& sensor) const { return jacobian_(alpha, sensor); }
    const Eigen::MatrixXd& noise_cov() const { return noise_cov_; }
    const Eigen::MatrixXd& noise_information() const { return noise_inv_; }
    const Eigen::MatrixXd& noise_factor() const { return noise_chol_; }
    /// Rows whose innovations are wrapped to (-pi, pi].
    const std::vector<bool>& angular() const { return angular_; }

private:
    int params_;
    int outputs_;
    PredictFn predict_;
    JacobianFn jacobian_;
    Eigen::MatrixXd noise_cov_;
    Eigen::MatrixXd noise_inv_;
    Eigen::MatrixXd noise_chol_;
    std::vector<bool> angular_;
};

/// Azimuth atan2(x_q - x_t, y_q - y_t) and elevation atan2(z_q - z_t, planar range)
/// from sensor q = [x_q, y_q, z_q] to target [x_t, y_t, z_t].
MeasurementModel bearing_model_3d(const Eigen::Matrix2d& noise_cov = Eigen::Vector2d(0.1, 0.1).asDiagonal());

/// Azimuth only, planar sensor and target.
MeasurementModel bearing_model_2d(double noise_var = 0.1);

/// J^T Sigma^-1 J at one target hypothesis.
Eigen::MatrixXd fim(const MeasurementModel& model, const Eigen::VectorXd& sensor, const Eigen::VectorXd& alpha);

/// Discretized belief: hypotheses (params x P) with normalized weights.
struct BeliefGrid {
    Eigen::MatrixXd points;
    Eigen::VectorXd weights;

    void validate() const;
    static BeliefGrid point_mass(const Eigen::VectorXd& alpha);
    /// Gaussian weights on a regular grid spanning mean +- extent * sigma per axis
    /// (axes with zero variance collapse to one point).
    static BeliefGrid gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& covariance, int cells_per_dim,
                               double extent = 3.0);
};

/// sum over hypotheses of fim * weight. Hypotheses where the model is
/// singular contribute nothing. `sensor_range` (planar, first two
/// coordinates) zeroes hypotheses the sensor could not observe.
Eigen::MatrixXd expected_info_matrix(const MeasurementModel& model, const Eigen::VectorXd& sensor, const BeliefGrid& belief,
                                     std::optional<double> sensor_range = std::nullopt);

/// det of the expected information matrix, clipped at zero.
double eid_value(const Eigen::MatrixXd& expected_info);

struct EidSettings {
    std::vector<int> cells;
    double exploration_floor = 0.0;
    int belief_cells = 7;
    double belief_extent = 3.0;
    std::optional<double> sensor_range;
};

/// Maps a planar grid point to the full sensor position (e.g. adds the held height).
using SensorPlacement = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// EID over the search domain: per-target D-optimality summed over detected
/// beliefs, max-normalized, floored, renormalized. Uniform if everything is zero.
SpatialGrid build_eid_grid(const MeasurementModel& model, const std::vector<TargetBelief>& beliefs,
                           const SensorPlacement& placement, const SearchDomain& domain, const EidSettings& settings);

}  // namespace rhee
