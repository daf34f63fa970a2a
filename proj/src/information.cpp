#include "rhee/information.hpp"

#include "rhee/errors.hpp"

#include <algorithm>
#include <cmath>

namespace rhee {

namespace {

constexpr double kSingularRange = 1e-12;

}  // namespace

MeasurementModel::MeasurementModel(int params, int outputs, PredictFn predict, JacobianFn jacobian, Eigen::MatrixXd noise_cov,
                                   std::vector<bool> angular)
    : params_(params),
      outputs_(outputs),
      predict_(std::move(predict)),
      jacobian_(std::move(jacobian)),
      noise_cov_(std::move(noise_cov)),
      angular_(std::move(angular)) {
    if (params_ <= 0 || outputs_ <= 0) throw UsageError("measurement model needs positive dimensions");
    if (!predict_ || !jacobian_) throw UsageError("measurement model needs predict and jacobian");
    if (noise_cov_.rows() != outputs_ || noise_cov_.cols() != outputs_)
        throw UsageError("noise covariance must be outputs x outputs");
    if (!noise_cov_.allFinite() || !noise_cov_.isApprox(noise_cov_.transpose(), 1e-12))
        throw UsageError("noise covariance must be finite and symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(noise_cov_);
    if (llt.info() != Eigen::Success) throw UsageError("noise covariance must be positive definite");
    noise_chol_ = llt.matrixL();
    noise_inv_ = llt.solve(Eigen::MatrixXd::Identity(outputs_, outputs_));
    if (angular_.empty()) angular_.assign(static_cast<std::size_t>(outputs_), false);
    if (static_cast<int>(angular_.size()) != outputs_) throw UsageError("angular flags must match outputs");
}

MeasurementModel bearing_model_3d(const Eigen::Matrix2d& noise_cov) {
    auto predict = [](const Eigen::VectorXd& a, const Eigen::VectorXd& q) {
        if (a.size() != 3 || q.size() != 3) throw UsageError("3-D bearing model expects 3-D target and sensor");
        double dx = q[0] - a[0], dy = q[1] - a[1], dz = q[2] - a[2];
        double rho = std::hypot(dx, dy);
        if (rho < kSingularRange && std::abs(dz) < kSingularRange) throw ModelSingular("sensor coincides with target");
        Eigen::VectorXd z(2);
        z << std::atan2(dx, dy), std::atan2(dz, rho);
        return z;
    };
    auto jacobian = [](const Eigen::VectorXd& a, const Eigen::VectorXd& q) {
        if (a.size() != 3 || q.size() != 3) throw UsageError("3-D bearing model expects 3-D target and sensor");
        double dx = q[0] - a[0], dy = q[1] - a[1], dz = q[2] - a[2];
        double rho2 = dx * dx + dy * dy;
        double rho = std::sqrt(rho2);
        if (rho < kSingularRange) throw ModelSingular("azimuth undefined directly above or below the target");
        double r2 = rho2 + dz * dz;
        Eigen::MatrixXd J(2, 3);
        J << -dy / rho2, dx / rho2, 0.0,
             dz * dx / (r2 * rho), dz * dy / (r2 * rho), -rho / r2;
        return J;
    };
    return MeasurementModel(3, 2, predict, jacobian, noise_cov, {true, true});
}

MeasurementModel bearing_model_2d(double noise_var) {
    auto predict = [](const Eigen::VectorXd& a, const Eigen::VectorXd& q) {
        if (a.size() != 2 || q.size() < 2) throw UsageError("planar bearing model expects 2-D target");
        double dx = q[0] - a[0], dy = q[1] - a[1];
        if (std::hypot(dx, dy) < kSingularRange) throw ModelSingular("sensor coincides with target");
        Eigen::VectorXd z(1);
        z << std::atan2(dx, dy);
        return z;
    };
    auto jacobian = [](const Eigen::VectorXd& a, const Eigen::VectorXd& q) {
        if (a.size() != 2 || q.size() < 2) throw UsageError("planar bearing model expects 2-D target");
        double dx = q[0] - a[0], dy = q[1] - a[1];
        double rho2 = dx * dx + dy * dy;
        if (std::sqrt(rho2) < kSingularRange) throw ModelSingular("sensor coincides with target");
        Eigen::MatrixXd J(1, 2);
        J << -dy / rho2, dx / rho2;
        return J;
    };
    Eigen::MatrixXd cov(1, 1);
    cov << noise_var;
    return MeasurementModel(2, 1, predict, jacobian, cov, {true});
}

Eigen::MatrixXd fim(const MeasurementModel& model, const Eigen::VectorXd& sensor, const Eigen::VectorXd& alpha) {
    Eigen::MatrixXd J = model.jacobian(alpha, sensor);
    return J.transpose() * model.noise_information() * J;
}

void BeliefGrid::validate() const {
    if (points.cols() == 0 || points.cols() != weights.size()) throw UsageError("belief grid needs one weight per point");
    if (!points.allFinite() || !weights.allFinite() || (weights.array() < 0.0).any())
        throw UsageError("belief grid weights must be finite and non-negative");
    if (std::abs(weights.sum() - 1.0) > 1e-9) throw UsageError("belief grid weights must sum to one");
}

BeliefGrid BeliefGrid::point_mass(const Eigen::VectorXd& alpha) {
    BeliefGrid g;
    g.points = alpha;
    g.weights = Eigen::VectorXd::Ones(1);
    return g;
}

BeliefGrid BeliefGrid::gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& covariance, int cells_per_dim,
                                double extent) {
    const Eigen::Index p = mean.size();
    if (covariance.rows() != p || covariance.cols() != p) throw UsageError("covariance must match the mean");
    if (cells_per_dim < 1 || !(extent > 0.0)) throw UsageError("belief grid needs cells >= 1 and positive extent");

    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < p; ++i)
        if (covariance(i, i) > 0.0) active.push_back(i);
    if (active.empty()) return point_mass(mean);

    const auto m = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd sub(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = covariance(active[a], active[b]);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sub);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw UsageError("belief covariance must be positive semidefinite");

    Eigen::Index total = 1;
    for (Eigen::Index a = 0; a < m; ++a) total *= cells_per_dim;
    BeliefGrid g;
    g.points.resize(p, total);
    g.weights.resize(total);
    std::vector<int> idx(static_cast<std::size_t>(m), 0);
    Eigen::VectorXd d(m);
    for (Eigen::Index n = 0; n < total; ++n) {
        Eigen::VectorXd x = mean;
        for (Eigen::Index a = 0; a < m; ++a) {
            double sigma = std::sqrt(covariance(active[a], active[a]));
            double width = 2.0 * extent * sigma / cells_per_dim;
            d[a] = -extent * sigma + (idx[static_cast<std::size_t>(a)] + 0.5) * width;
            x[active[a]] += d[a];
        }
        g.points.col(n) = x;
        g.weights[n] = std::exp(-0.5 * d.dot(ldlt.solve(d)));
        for (Eigen::Index a = m - 1; a >= 0; --a) {
            if (++idx[static_cast<std::size_t>(a)] < cells_per_dim) break;
            idx[static_cast<std::size_t>(a)] = 0;
        }
    }
    double total_weight = g.weights.sum();
    if (!(total_weight > 0.0)) throw UsageError("belief grid has no mass");
    g.weights /= total_weight;
    return g;
}

Eigen::MatrixXd expected_info_matrix(const MeasurementModel& model, const Eigen::VectorXd& sensor, const BeliefGrid& belief,
                                     std::optional<double> sensor_range) {
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(model.params(), model.params());
    for (Eigen::Index n = 0; n < belief.points.cols(); ++n) {
        if (belief.weights[n] == 0.0) continue;
        Eigen::VectorXd alpha = belief.points.col(n);
        if (sensor_range && std::hypot(sensor[0] - alpha[0], sensor[1] - alpha[1]) >= *sensor_range) continue;
        try {
            info += belief.weights[n] * fim(model, sensor, alpha);
        } catch (const ModelSingular&) {
        }
    }
    return info;
}

double eid_value(const Eigen::MatrixXd& expected_info) {
    if (expected_info.size() == 0) return 0.0;
    double d = expected_info.determinant();
    return std::isfinite(d) ? std::max(d, 0.0) : 0.0;
}

SpatialGrid build_eid_grid(const MeasurementModel& model, const std::vector<TargetBelief>& beliefs,
                           const SensorPlacement& placement, const SearchDomain& domain, const EidSettings& settings) {
    if (settings.exploration_floor < 0.0 || settings.exploration_floor > 1.0)
        throw UsageError("exploration floor must lie in [0, 1]");
    if (!placement) throw UsageError("sensor placement is required");
    SpatialGrid grid(domain, settings.cells);

    std::vector<BeliefGrid> hypotheses;
    for (const auto& b : beliefs) {
        if (!b.detected) continue;
        if (b.mean.size() != model.params()) throw UsageError("belief dimension does not match the measurement model");
        hypotheses.push_back(BeliefGrid::gaussian(b.mean, b.covariance, settings.belief_cells, settings.belief_extent));
    }

    Eigen::VectorXd& v = grid.values();
    v.setZero();
    if (!hypotheses.empty()) {
        for (std::size_t c = 0; c < grid.size(); ++c) {
            Eigen::VectorXd sensor = placement(grid.cell_center(c));
            double total = 0.0;
            for (const auto& h : hypotheses) total += eid_value(expected_info_matrix(model, sensor, h, settings.sensor_range));
            v[static_cast<Eigen::Index>(c)] = total;
        }
    }
    double peak = v.size() > 0 ? v.maxCoeff() : 0.0;
    if (peak > 0.0) {
        v /= peak;
        v = v.cwiseMax(settings.exploration_floor);
    }
    grid.normalize();
    return grid;
}

}  // namespace rhee
