#include "doctest.h"
#include "oracles.hpp"

#include "rhee/errors.hpp"
#include "rhee/estimation.hpp"

#include <numbers>

using namespace rhee;

namespace {

TargetBelief belief2(double x, double y, double var) {
    return TargetBelief{1, Eigen::Vector2d(x, y), var * Eigen::Matrix2d::Identity(), true};
}

bool is_spd(const Eigen::MatrixXd& p) {
    if (!p.allFinite() || (p - p.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, p.norm())) return false;
    return p.llt().info() == Eigen::Success && Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p).eigenvalues().minCoeff() > 0.0;
}

}  // namespace

TEST_CASE("prediction adds the process covariance per step") {
    TargetBelief b{1, Eigen::Vector3d(0.1, 0.2, 0.0), 0.01 * Eigen::Matrix3d::Identity(), true};
    const Eigen::Matrix3d c = Eigen::Vector3d(0.001, 0.001, 0.001).asDiagonal();
    const TargetBelief once = ekf_predict(b, c);
    CHECK(once.covariance.trace() == doctest::Approx(b.covariance.trace() + 0.003));
    CHECK(once.mean == b.mean);
    TargetBelief many = b;
    for (int i = 0; i < 25; ++i) many = ekf_predict(many, c);
    CHECK((many.covariance - (b.covariance + 25.0 * c)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("an update with zero innovation keeps the mean and shrinks the covariance") {
    const auto m = bearing_model_2d();
    const TargetBelief b = belief2(0.5, 0.5, 0.01);
    const Eigen::Vector2d sensor(0.6, 0.65);
    const auto up = ekf_update(b, m, sensor, m.predict(b.mean, sensor));
    CHECK_FALSE(up.skipped);
    CHECK((up.belief.mean - b.mean).norm() < 1e-14);
    const Eigen::MatrixXd drop = b.covariance - up.belief.covariance;
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(drop).eigenvalues().minCoeff() > -1e-15);
    CHECK(up.belief.covariance.trace() < b.covariance.trace());
    CHECK(is_spd(up.belief.covariance));
}

TEST_CASE("a blind measurement leaves the belief unchanged") {
    const MeasurementModel blind(
        2, 1, [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(1); },
        [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(1, 2); },
        Eigen::MatrixXd::Constant(1, 1, 0.1), {false});
    const TargetBelief b = belief2(0.3, 0.4, 0.02);
    const auto up = ekf_update(b, blind, Eigen::Vector2d(0.0, 0.0), Eigen::VectorXd::Constant(1, 0.7));
    CHECK(up.belief.mean == b.mean);
    CHECK(up.belief.covariance.isApprox(b.covariance));
}

TEST_CASE("updates at a singular geometry are skipped") {
    const auto m = bearing_model_2d();
    const TargetBelief b = belief2(0.5, 0.5, 0.01);
    const auto up = ekf_update(b, m, Eigen::Vector2d(0.5, 0.5), Eigen::VectorXd::Constant(1, 0.3));
    CHECK(up.skipped);
    CHECK(up.belief.mean == b.mean);
}

TEST_CASE("angle innovations are wrapped") {
    const auto m = bearing_model_2d();
    // sensor due south of the belief: predicted azimuth is pi
    const TargetBelief b = belief2(0.5, 0.5, 0.01);
    const Eigen::Vector2d sensor(0.52, 0.3);
    const double z = m.predict(Eigen::Vector2d(0.49, 0.5), sensor)[0];
    const auto a = ekf_update(b, m, sensor, Eigen::VectorXd::Constant(1, z));
    const auto c = ekf_update(b, m, sensor, Eigen::VectorXd::Constant(1, z - 2.0 * std::numbers::pi));
    CHECK((a.belief.mean - c.belief.mean).norm() < 1e-12);
    CHECK((a.belief.mean - b.mean).norm() < 0.05);
    CHECK(wrap_angle(std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(3.0 * std::numbers::pi / 2.0) == doctest::Approx(-std::numbers::pi / 2.0));
    CHECK(wrap_angle(0.25 + 8.0 * std::numbers::pi) == doctest::Approx(0.25));
}

TEST_CASE("noiseless bearings from many vantages triangulate the target") {
    double mean3 = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        CHECK(testing::triangulation_error(seed, false) < 1e-3);
        mean3 += testing::triangulation_error(seed, true) / 10.0;
    }
    CHECK(mean3 < 1e-3);
    // a tight prior keeps pulling the mean back; the error still decreases
    CHECK(testing::triangulation_error(3, false, 0.1) < 5e-3);
}

TEST_CASE("covariance stays symmetric positive definite through random sequences") {
    std::mt19937_64 rng(2024);
    const auto m2 = bearing_model_2d();
    const auto m3 = bearing_model_3d();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int skipped = 0;
    for (int seq = 0; seq < 300; ++seq) {
        const bool three = seq % 2 == 1;
        const auto& m = three ? m3 : m2;
        const int p = m.params();
        const Eigen::VectorXd truth = testing::uniform_vector(rng, p, 0.0, 1.0);
        TargetBelief b{0, truth + testing::uniform_vector(rng, p, -0.1, 0.1), 0.01 * Eigen::MatrixXd::Identity(p, p), true};
        const Eigen::MatrixXd c = 1e-6 * Eigen::MatrixXd::Identity(p, p);
        for (int step = 0; step < 40; ++step) {
            b = ekf_predict(b, c);
            Eigen::VectorXd q = testing::uniform_vector(rng, p, 0.0, 1.0);
            if (three) q[2] = 1.0;
            try {
                const auto up = ekf_update(b, m, q, sample_measurement(m, truth, q, rng));
                skipped += up.skipped;
                b = up.belief;
            } catch (const ModelSingular&) {
            }
            REQUIRE(is_spd(b.covariance));
        }
    }
    CHECK(skipped < 100);
}

TEST_CASE("sampled measurements have the model noise statistics") {
    std::mt19937_64 rng(6);
    Eigen::Matrix2d sigma;
    sigma << 0.1, 0.03, 0.03, 0.05;
    const auto m3 = bearing_model_3d(sigma);
    const Eigen::Vector3d target(0.3, 0.3, 0.0), sensor(0.5, 0.6, 1.0);
    const Eigen::Vector2d mean_expected = m3.predict(target, sensor);
    const int n = 40000;
    Eigen::MatrixXd draws(2, n);
    for (int i = 0; i < n; ++i) draws.col(i) = sample_measurement(m3, target, sensor, rng);
    const Eigen::Vector2d mean = draws.rowwise().mean();
    const Eigen::MatrixXd centered = draws.colwise() - mean;
    const Eigen::Matrix2d cov = centered * centered.transpose() / (n - 1);
    CHECK((mean - mean_expected).cwiseAbs().maxCoeff() < 0.05 * std::sqrt(0.1));
    CHECK((cov - sigma).cwiseAbs().maxCoeff() < 0.05 * sigma.cwiseAbs().maxCoeff());
}

TEST_CASE("range gate and localization use strict inequalities") {
    CHECK(range_gate(Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(0.1, 0.0), 0.2));
    CHECK_FALSE(range_gate(Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(0.25, 0.0), 0.25));
    CHECK(range_gate(Eigen::Vector3d(0.0, 0.0, 5.0), Eigen::Vector3d(0.1, 0.0, 0.0), 0.2));
    const TargetBelief b = belief2(0.5, 0.5, 0.01);
    CHECK(localization_status(b, Eigen::Vector2d(0.52, 0.5)));
    CHECK_FALSE(localization_status(b, Eigen::Vector2d(0.5, 0.5625), 0.0625));
    TargetBelief hidden = b;
    hidden.detected = false;
    CHECK_FALSE(localization_status(hidden, b.mean));
}

TEST_CASE("first bearing initializes the belief half a range back along the azimuth") {
    const Eigen::Vector2d sensor(0.5, 0.5);
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, std::numbers::pi / 2.0);
    const TargetBelief b = initial_belief(4, sensor, z, 0.2, 2, 0.1);
    CHECK(b.detected);
    CHECK(b.id == 4);
    CHECK(b.mean[0] == doctest::Approx(0.4));
    CHECK(b.mean[1] == doctest::Approx(0.5));
    CHECK(b.covariance.isApprox(0.01 * Eigen::Matrix2d::Identity()));

    const Eigen::Vector3d q(0.5, 0.5, 1.0);
    const auto m3 = bearing_model_3d();
    const Eigen::Vector3d target(0.5, 0.4, 1.0 - 0.1 * std::tan(0.3));
    const TargetBelief b3 = initial_belief(1, q, m3.predict(target, q), 0.2, 3);
    CHECK((b3.mean - target).norm() < 1e-12);
}

TEST_CASE("detection lifecycle follows range, presence and belief state") {
    const auto m2 = bearing_model_2d(1e-6);
    std::vector<TargetTruth> truths{static_target(1, Eigen::Vector2d(0.2, 0.2)), static_target(2, Eigen::Vector2d(0.8, 0.8)),
                                    static_target(3, Eigen::Vector2d(0.25, 0.2), 5.0)};
    std::vector<TargetBelief> beliefs(3);
    std::vector<std::mt19937_64> rngs{std::mt19937_64(1), std::mt19937_64(2), std::mt19937_64(3)};
    const Eigen::Vector2d sensor(0.2, 0.3);

    auto tick = detect_and_measure(truths, beliefs, sensor, m2, 0.2, rngs, 0.0);
    CHECK(tick.new_detections == std::vector<int>{1});
    CHECK(tick.measurements.size() == 1);
    CHECK(beliefs[0].detected);
    CHECK((beliefs[0].mean - Eigen::Vector2d(0.2, 0.2)).norm() < 1e-3);
    CHECK_FALSE(beliefs[1].detected);
    CHECK_FALSE(beliefs[2].detected);

    tick = detect_and_measure(truths, beliefs, sensor, m2, 0.2, rngs, 6.0);
    CHECK(tick.new_detections == std::vector<int>{3});
    CHECK(tick.measurements.size() == 2);
    CHECK(tick.measurements[0].time == 6.0);

    std::vector<TargetBelief> short_beliefs(2);
    CHECK_THROWS_AS(detect_and_measure(truths, short_beliefs, sensor, m2, 0.2, rngs, 0.0), UsageError);
}

TEST_CASE("target motion models") {
    const auto w = waypoint_target(1, {1.0, 3.0}, (Eigen::MatrixXd(2, 2) << 0.0, 1.0, 0.0, 0.5).finished());
    CHECK(w.position(0.0).isApprox(Eigen::Vector2d(0.0, 0.0)));
    CHECK(w.position(2.0).isApprox(Eigen::Vector2d(0.5, 0.25)));
    CHECK(w.position(9.0).isApprox(Eigen::Vector2d(1.0, 0.5)));

    const auto d1 = diffusion_target(2, Eigen::Vector2d(0.5, 0.5), 0.3, 0.1, 0.0, 50.0, {1.0, 1.0}, 11);
    const auto d2 = diffusion_target(2, Eigen::Vector2d(0.5, 0.5), 0.3, 0.1, 0.0, 50.0, {1.0, 1.0}, 11);
    double moved = 0.0;
    for (double t = 0.0; t <= 50.0; t += 0.37) {
        const Eigen::VectorXd p = d1.position(t);
        CHECK(p == d2.position(t));
        CHECK(p.minCoeff() >= 0.0);
        CHECK(p.maxCoeff() <= 1.0);
        moved = std::max(moved, (p - Eigen::Vector2d(0.5, 0.5)).norm());
    }
    CHECK(moved > 0.1);
    CHECK_FALSE(static_target(1, Eigen::Vector2d(0, 0), 2.0).present(1.0));
}
