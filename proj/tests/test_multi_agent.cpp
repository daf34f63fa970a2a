#include "doctest.h"
#include "oracles.hpp"

#include "rhee/errors.hpp"
#include "rhee/multi_agent.hpp"

using namespace rhee;

namespace {

CoefficientMessage sample_message(std::uint32_t id, std::size_t count) {
    CoefficientMessage msg;
    msg.agent_id = id;
    msg.step_index = 1234567890123ULL;
    msg.t0erg = 0.5;
    msg.t_end = 2.25;
    msg.coefficients = CoefficientVector(Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(count), -1.0, 1.0 + id));
    return msg;
}

ControllerConfig small_config() {
    ControllerConfig cfg;
    cfg.K = 5;
    cfg.horizon = 0.1;
    cfg.sample_time = 0.02;
    cfg.dt = 0.002;
    return cfg;
}

}  // namespace

TEST_CASE("coefficient messages round-trip and reject truncation") {
    const auto msg = sample_message(7, 36);
    const auto bytes = encode_message(msg);
    CHECK(bytes.size() == msg.wire_size());
    CHECK(bytes.size() == 32 + 8 * 36);
    const auto back = decode_message(bytes);
    CHECK(back.agent_id == 7);
    CHECK(back.step_index == msg.step_index);
    CHECK(back.t0erg == 0.5);
    CHECK(back.t_end == 2.25);
    CHECK(back.coefficients.values == msg.coefficients.values);
    // little-endian agent id
    CHECK(bytes[0] == 7);
    CHECK(bytes[1] == 0);
    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS(decode_message(cut));
    auto longer = bytes;
    longer.push_back(0);
    CHECK_THROWS(decode_message(longer));
}

TEST_CASE("peer coefficients combine as own plus the peer mean or as the agent mean") {
    const CoefficientVector own(Eigen::Vector3d(1.0, 2.0, 3.0));
    const std::vector<CoefficientVector> others{CoefficientVector(Eigen::Vector3d(0.0, 1.0, 0.0)),
                                                CoefficientVector(Eigen::Vector3d(2.0, 1.0, 4.0))};
    CHECK(combine_coeffs(own, others, 3).values.isApprox(Eigen::Vector3d(2.0, 3.0, 5.0)));
    CHECK(combine_coeffs(own, others, 3, true).values.isApprox(Eigen::Vector3d(1.0, 4.0 / 3.0, 7.0 / 3.0)));
    CHECK(combine_coeffs(own, {}, 1).values == own.values);
    const auto blend = coefficient_blend(others, 3, true);
    CHECK(blend.own_weight == doctest::Approx(1.0 / 3.0));
    CHECK(blend.apply(own).values.isApprox(combine_coeffs(own, others, 3, true).values));
    CHECK_THROWS_AS(combine_coeffs(own, others, 2), UsageError);
}

TEST_CASE("hub delivers peers in id order and re-sends stale messages") {
    CoefficientHub hub(3);
    std::vector<std::optional<CoefficientMessage>> out{sample_message(0, 9), sample_message(1, 9), sample_message(2, 9)};
    auto d = hub.exchange(out);
    REQUIRE(d.size() == 3);
    CHECK(d[1].messages.size() == 2);
    CHECK(d[1].messages[0].agent_id == 0);
    CHECK(d[1].messages[1].agent_id == 2);
    CHECK(d[0].stale == std::vector<bool>{false, false});
    const std::uint64_t per_message = 32 + 8 * 9;
    CHECK(hub.last_bytes_received(0) == 2 * per_message);
    CHECK(hub.bytes_sent(2) == per_message);

    out[2].reset();
    d = hub.exchange(out);
    CHECK(d[0].stale == std::vector<bool>{false, true});
    CHECK(d[0].messages[1].agent_id == 2);
    CHECK(hub.stale_deliveries() == 2);
    CHECK(hub.bytes_received(0) == 4 * per_message);
}

TEST_CASE("loopback transport delivers the same bytes as the in-process relay") {
    UdpLoopbackTransport udp(3);
    CoefficientHub over_udp(3, &udp);
    CoefficientHub local(3);
    std::vector<std::optional<CoefficientMessage>> out{sample_message(0, 121), sample_message(1, 121), sample_message(2, 121)};
    const auto a = over_udp.exchange(out);
    const auto b = local.exchange(out);
    for (int j = 0; j < 3; ++j) {
        for (std::size_t k = 0; k < 2; ++k) {
            CHECK(a[j].messages[k].coefficients.values == b[j].messages[k].coefficients.values);
            CHECK(a[j].messages[k].agent_id == b[j].messages[k].agent_id);
        }
        CHECK(over_udp.last_bytes_received(j) == local.last_bytes_received(j));
    }
}

TEST_CASE("coefficient bit rate follows the exchange size") {
    CHECK(coefficient_bit_rate(3, 10, 2, 0.02) == doctest::Approx(2.0 * 121.0 * 64.0 / 0.02));
    CHECK(coefficient_bit_rate(1, 10, 2, 0.02) == 0.0);
}

TEST_CASE("collective ergodicity reduces to the single-agent metric") {
    std::mt19937_64 rng(8);
    const FourierBasis basis(SearchDomain({1.0, 1.0}), 6);
    const CoefficientVector phi = distribution_coeffs(testing::random_density(rng, basis.domain()), basis);
    TrajectorySegment seg;
    seg.points.resize(2, 101);
    for (int j = 0; j <= 100; ++j) {
        seg.times.push_back(0.01 * j);
        seg.points.col(j) << 0.5 + 0.3 * std::cos(3.0 * j * 0.01), 0.5 + 0.3 * std::sin(5.0 * j * 0.01);
    }
    const double single = ergodic_metric(trajectory_coeffs(seg, basis, 0.0, 1.0), phi, basis);
    CHECK(collective_ergodicity({seg}, phi, basis, 0.0, 1.0) == doctest::Approx(single).epsilon(1e-14));
    CHECK(collective_ergodicity({seg, seg, seg}, phi, basis, 0.0, 1.0) == doctest::Approx(single).epsilon(1e-12));
}

TEST_CASE("multi-agent loop exchanges the expected bytes and is deterministic") {
    const ControllerConfig cfg = small_config();
    const FourierBasis basis(SearchDomain({1.0, 1.0}), cfg.K);
    const auto sys = make_double_integrator(50.0, true);
    SpatialGrid g(basis.domain(), {20, 20});
    g.normalize();
    const CoefficientVector phi = distribution_coeffs(g, basis);
    const std::vector<Eigen::VectorXd> x0{Eigen::Vector4d(0.2, 0, 0.2, 0), Eigen::Vector4d(0.25, 0, 0.2, 0),
                                          Eigen::Vector4d(0.2, 0, 0.25, 0)};
    MultiAgentOptions options;
    options.dropped_messages = {{3, 1}};
    const auto run = run_multi_agent(0.0, x0, phi, 0.4, sys, basis, cfg, make_zero_nominal(2), options);
    REQUIRE(run.agents.size() == 3);
    CHECK(run.agents[0].steps.size() == 20);
    CHECK(run.collective_series.size() == 20);
    const std::uint64_t expected = 2 * (kMessageHeaderBytes + 8 * 36);
    for (const auto& step : run.bytes_received) {
        for (auto b : step) CHECK(b == expected);
    }
    CHECK(run.stale_deliveries == 2);

    options.parallel = true;
    const auto again = run_multi_agent(0.0, x0, phi, 0.4, sys, basis, cfg, make_zero_nominal(2), options);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(again.agents[j].trajectory.states == run.agents[j].trajectory.states);
    }
}
