#include "rhee/multi_agent.hpp"

#include "rhee/errors.hpp"
#include "rhee/grid_io.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <future>
#include <stdexcept>

namespace rhee {

std::vector<std::uint8_t> encode_message(const CoefficientMessage& msg) {
    ByteWriter w;
    w.put_u32(msg.agent_id);
    w.put_u64(msg.step_index);
    w.put_f64(msg.t0erg);
    w.put_f64(msg.t_end);
    w.put_u32(static_cast<std::uint32_t>(msg.coefficients.size()));
    for (std::size_t j = 0; j < msg.coefficients.size(); ++j) w.put_f64(msg.coefficients[j]);
    return w.take();
}

CoefficientMessage decode_message(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    CoefficientMessage msg;
    msg.agent_id = r.get_u32();
    msg.step_index = r.get_u64();
    msg.t0erg = r.get_f64();
    msg.t_end = r.get_f64();
    const std::uint32_t count = r.get_u32();
    if (r.remaining() != static_cast<std::size_t>(count) * 8) throw UsageError("decode_message: payload size does not match count");
    msg.coefficients = CoefficientVector::zeros(count);
    for (std::uint32_t j = 0; j < count; ++j) msg.coefficients[j] = r.get_f64();
    return msg;
}

CoefficientVector combine_coeffs(const CoefficientVector& own, const std::vector<CoefficientVector>& others, int n_agents,
                                 bool normalized) {
    return coefficient_blend(others, n_agents, normalized).apply(own);
}

CoefficientBlend coefficient_blend(const std::vector<CoefficientVector>& others, int n_agents, bool normalized) {
    if (n_agents < 1) throw UsageError("coefficient_blend: need at least one agent");
    if (static_cast<int>(others.size()) != n_agents - 1) throw UsageError("coefficient_blend: expected N-1 peer vectors");
    CoefficientBlend blend;
    if (others.empty()) return blend;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(others.front().values.size());
    for (const auto& c : others) {
        if (c.values.size() != sum.size()) throw UsageError("coefficient_blend: peer vectors differ in length");
        sum += c.values;
    }
    if (normalized) {
        blend.own_weight = 1.0 / n_agents;
        blend.offset = sum / n_agents;
    } else {
        blend.offset = sum / (n_agents - 1);
    }
    return blend;
}

namespace {

int open_loopback_socket() {
    const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd < 0) throw std::runtime_error(std::string("UdpLoopbackTransport: socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw std::runtime_error(std::string("UdpLoopbackTransport: bind: ") + std::strerror(errno));
    }
    timeval tv{1, 0};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    return fd;
}

sockaddr_in local_address(int fd) {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
        throw std::runtime_error("UdpLoopbackTransport: getsockname failed");
    }
    return addr;
}

}  // namespace

UdpLoopbackTransport::UdpLoopbackTransport(int n_agents) {
    if (n_agents < 1) throw UsageError("UdpLoopbackTransport: need at least one agent");
    hub_fd_ = open_loopback_socket();
    try {
        for (int j = 0; j < n_agents; ++j) agent_fds_.push_back(open_loopback_socket());
    } catch (...) {
        for (int fd : agent_fds_) ::close(fd);
        ::close(hub_fd_);
        throw;
    }
}

UdpLoopbackTransport::~UdpLoopbackTransport() {
    for (int fd : agent_fds_) ::close(fd);
    if (hub_fd_ >= 0) ::close(hub_fd_);
}

void UdpLoopbackTransport::send_to(int fd, int target_fd, const std::vector<std::uint8_t>& bytes) {
    const sockaddr_in dest = local_address(target_fd);
    const auto sent = ::sendto(fd, bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&dest), sizeof(dest));
    if (sent != static_cast<ssize_t>(bytes.size())) throw std::runtime_error("UdpLoopbackTransport: short send");
}

std::vector<std::uint8_t> UdpLoopbackTransport::receive(int fd) {
    std::vector<std::uint8_t> buf(65536);
    const auto got = ::recv(fd, buf.data(), buf.size(), 0);
    if (got < 0) throw std::runtime_error(std::string("UdpLoopbackTransport: recv: ") + std::strerror(errno));
    buf.resize(static_cast<std::size_t>(got));
    return buf;
}

std::vector<std::uint8_t> UdpLoopbackTransport::relay(std::uint32_t from, std::uint32_t to, const std::vector<std::uint8_t>& bytes) {
    if (from >= agent_fds_.size() || to >= agent_fds_.size()) throw UsageError("UdpLoopbackTransport: unknown agent");
    send_to(agent_fds_[from], hub_fd_, bytes);
    const auto at_hub = receive(hub_fd_);
    send_to(hub_fd_, agent_fds_[to], at_hub);
    return receive(agent_fds_[to]);
}

CoefficientHub::CoefficientHub(int n_agents, MessageTransport* transport)
    : n_(n_agents),
      transport_(transport),
      latest_(static_cast<std::size_t>(n_agents)),
      sent_total_(static_cast<std::size_t>(n_agents), 0),
      received_total_(static_cast<std::size_t>(n_agents), 0),
      received_last_(static_cast<std::size_t>(n_agents), 0) {
    if (n_agents < 1) throw UsageError("CoefficientHub: need at least one agent");
}

std::vector<Delivery> CoefficientHub::exchange(const std::vector<std::optional<CoefficientMessage>>& outgoing) {
    if (static_cast<int>(outgoing.size()) != n_) throw UsageError("CoefficientHub: one slot per agent is required");
    std::vector<bool> fresh(static_cast<std::size_t>(n_), false);
    for (std::size_t j = 0; j < outgoing.size(); ++j) {
        if (!outgoing[j]) continue;
        if (outgoing[j]->agent_id != j) throw UsageError("CoefficientHub: message in the wrong slot");
        latest_[j] = encode_message(*outgoing[j]);
        sent_total_[j] += latest_[j]->size();
        fresh[j] = true;
    }
    std::vector<Delivery> out(static_cast<std::size_t>(n_));
    for (std::size_t to = 0; to < out.size(); ++to) {
        received_last_[to] = 0;
        for (std::size_t from = 0; from < out.size(); ++from) {
            if (from == to || !latest_[from]) continue;
            const auto bytes = transport_ ? transport_->relay(static_cast<std::uint32_t>(from), static_cast<std::uint32_t>(to), *latest_[from])
                                          : *latest_[from];
            received_last_[to] += bytes.size();
            out[to].messages.push_back(decode_message(bytes));
            out[to].stale.push_back(!fresh[from]);
            if (!fresh[from]) ++stale_count_;
        }
        received_total_[to] += received_last_[to];
    }
    return out;
}

double coefficient_bit_rate(int n_agents, int order, int dims, double sample_time) {
    double per_agent = 1.0;
    for (int d = 0; d < dims; ++d) per_agent *= order + 1;
    return (n_agents - 1) * per_agent * 64.0 / sample_time;
}

double collective_ergodicity(const std::vector<TrajectorySegment>& trajectories, const CoefficientVector& phi,
                             const FourierBasis& basis, double t0erg, double t_end) {
    if (trajectories.empty()) throw UsageError("collective_ergodicity: no trajectories");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
    for (const auto& seg : trajectories) mean += trajectory_coeffs(seg, basis, t0erg, t_end).values;
    mean /= static_cast<double>(trajectories.size());
    return ergodic_metric(CoefficientVector(mean), phi, basis);
}

namespace {

void append_samples(StateTrajectory& into, const StateTrajectory& applied) {
    const std::size_t skip = into.samples() == 0 ? 0 : 1;
    const auto old_cols = static_cast<Eigen::Index>(into.samples());
    const auto add = static_cast<Eigen::Index>(applied.samples() - skip);
    into.states.conservativeResize(applied.states.rows(), old_cols + add);
    into.controls.conservativeResize(applied.controls.rows(), old_cols + add);
    if (old_cols > 0) into.controls.col(old_cols - 1) = applied.controls.col(0);
    for (Eigen::Index j = 0; j < add; ++j) {
        const auto src = j + static_cast<Eigen::Index>(skip);
        into.times.push_back(applied.times[static_cast<std::size_t>(src)]);
        into.states.col(old_cols + j) = applied.states.col(src);
        into.controls.col(old_cols + j) = applied.controls.col(src);
    }
}

}  // namespace

MultiAgentRun run_multi_agent(double t0, const std::vector<Eigen::VectorXd>& initial_states, const CoefficientVector& phi,
                              double tf, const ControlAffineSystem& sys, const FourierBasis& basis, const ControllerConfig& cfg,
                              const NominalControl& u_nom, const MultiAgentOptions& options) {
    const int n = static_cast<int>(initial_states.size());
    if (n < 1) throw UsageError("run_multi_agent: need at least one agent");
    if (!(tf > t0)) throw UsageError("run_multi_agent: tf must exceed t0");

    std::vector<ErgodicController> agents;
    agents.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        agents.emplace_back(sys, basis, cfg, u_nom);
        agents.back().reset(t0, initial_states[static_cast<std::size_t>(j)], t0, phi);
    }
    std::vector<Eigen::VectorXd> states = initial_states;
    CoefficientHub hub(n, options.transport);
    std::vector<Delivery> inbox(static_cast<std::size_t>(n));

    MultiAgentRun run;
    run.agents.resize(static_cast<std::size_t>(n));
    const auto steps = static_cast<std::int64_t>(std::llround((tf - t0) / cfg.sample_time));

    auto advance = [&](std::size_t j) {
        auto& ctl = agents[j];
        if (n > 1 && inbox[j].messages.size() == static_cast<std::size_t>(n - 1)) {
            std::vector<CoefficientVector> others;
            for (const auto& m : inbox[j].messages) others.push_back(m.coefficients);
            ctl.set_blend(coefficient_blend(others, n, options.normalized_average));
        }
        auto& log = run.agents[j];
        log.steps.push_back(ctl.solve(ctl.time(), states[j]));
        StateTrajectory applied = ctl.apply(states[j]);
        contain_in_domain(ctl, applied);
        append_samples(log.trajectory, applied);
        states[j] = applied.final_state();
    };

    for (std::int64_t i = 0; i < steps; ++i) {
        if (options.parallel && n > 1) {
            std::vector<std::future<void>> jobs;
            for (std::size_t j = 0; j < agents.size(); ++j) jobs.push_back(std::async(std::launch::async, advance, j));
            for (auto& job : jobs) job.get();
        } else {
            for (std::size_t j = 0; j < agents.size(); ++j) advance(j);
        }

        std::vector<std::optional<CoefficientMessage>> outgoing(static_cast<std::size_t>(n));
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
        for (std::size_t j = 0; j < agents.size(); ++j) {
            const auto& ctl = agents[j];
            const bool dropped = std::find(options.dropped_messages.begin(), options.dropped_messages.end(),
                                           std::make_pair(i, static_cast<std::uint32_t>(j))) != options.dropped_messages.end();
            if (!dropped) {
                outgoing[j] = CoefficientMessage{static_cast<std::uint32_t>(j), static_cast<std::uint64_t>(i),
                                                 ctl.history().t0erg, ctl.time() - cfg.sample_time + cfg.horizon,
                                                 ctl.planned_coefficients()};
            }
            run.agents[j].metric_series.emplace_back(ctl.time(), ctl.realized_metric());
            mean += ctl.realized_coefficients().values;
        }
        mean /= n;
        run.collective_series.emplace_back(agents.front().time(), ergodic_metric(CoefficientVector(mean), phi, basis));

        inbox = hub.exchange(outgoing);
        std::vector<std::uint64_t> received(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) received[static_cast<std::size_t>(j)] = hub.last_bytes_received(j);
        run.bytes_received.push_back(std::move(received));
    }
    run.stale_deliveries = hub.stale_deliveries();
    return run;
}

}  // namespace rhee
