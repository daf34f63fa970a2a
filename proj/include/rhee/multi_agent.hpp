#pragma once

// Coefficient sharing between agents exploring one distribution: the wire
// message, the star-topology hub with byte accounting, the coefficient blend
// and the N-agent receding-horizon loop.
//
// Wire format (little-endian):
//   u32 agent_id, u64 step_index, f64 t0erg, f64 t_end, u32 count, count x f64

#include "rhee/controller.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace rhee {

inline constexpr std::size_t kMessageHeaderBytes = 4 + 8 + 8 + 8 + 4;

struct CoefficientMessage {
    std::uint32_t agent_id = 0;
    std::uint64_t step_index = 0;
    double t0erg = 0.0;
    double t_end = 0.0;
    CoefficientVector coefficients;

    std::size_t wire_size() const { return kMessageHeaderBytes + 8 * coefficients.size(); }
};

std::vector<std::uint8_t> encode_message(const CoefficientMessage& msg);
CoefficientMessage decode_message(std::span<const std::uint8_t> bytes);

/// own + (1/(N-1)) * sum(others), or (own + sum(others)) / N when `normalized`.
CoefficientVector combine_coeffs(const CoefficientVector& own, const std::vector<CoefficientVector>& others, int n_agents,
                                 bool normalized = false);

/// The same combination expressed as a blend on the agent's own coefficients.
CoefficientBlend coefficient_blend(const std::vector<CoefficientVector>& others, int n_agents, bool normalized = false);

struct Delivery {
    std::vector<CoefficientMessage> messages;  // the other agents, ascending id
    std::vector<bool> stale;                   // re-delivered from an earlier step
};

/// Moves encoded messages between agents. The default is an in-process copy.
class MessageTransport {
public:
    virtual ~MessageTransport() = default;
    /// Sends one encoded message from `from` to `to` and returns the bytes as received.
    virtual std::vector<std::uint8_t> relay(std::uint32_t from, std::uint32_t to, const std::vector<std::uint8_t>& bytes) = 0;
};

/// Datagrams over 127.0.0.1: one socket for the hub and one per agent.
class UdpLoopbackTransport final : public MessageTransport {
public:
    explicit UdpLoopbackTransport(int n_agents);
    ~UdpLoopbackTransport() override;
    UdpLoopbackTransport(const UdpLoopbackTransport&) = delete;
    UdpLoopbackTransport& operator=(const UdpLoopbackTransport&) = delete;

    std::vector<std::uint8_t> relay(std::uint32_t from, std::uint32_t to, const std::vector<std::uint8_t>& bytes) override;

private:
    void send_to(int fd, int target_fd, const std::vector<std::uint8_t>& bytes);
    std::vector<std::uint8_t> receive(int fd);

    int hub_fd_ = -1;
    std::vector<int> agent_fds_;
};

/// Synchronous star relay. Each exchange is one step boundary.
class CoefficientHub {
public:
    explicit CoefficientHub(int n_agents, MessageTransport* transport = nullptr);

    /// outgoing[j] is agent j's message for this step, or nullopt if it missed
    /// the step (its last message is then re-delivered and flagged stale).
    std::vector<Delivery> exchange(const std::vector<std::optional<CoefficientMessage>>& outgoing);

    int agents() const { return n_; }
    std::uint64_t bytes_sent(int agent) const { return sent_total_[static_cast<std::size_t>(agent)]; }
    std::uint64_t bytes_received(int agent) const { return received_total_[static_cast<std::size_t>(agent)]; }
    std::uint64_t last_bytes_received(int agent) const { return received_last_[static_cast<std::size_t>(agent)]; }
    std::uint64_t stale_deliveries() const { return stale_count_; }

private:
    int n_;
    MessageTransport* transport_;
    std::vector<std::optional<std::vector<std::uint8_t>>> latest_;
    std::vector<std::uint64_t> sent_total_;
    std::vector<std::uint64_t> received_total_;
    std::vector<std::uint64_t> received_last_;
    std::uint64_t stale_count_ = 0;
};

/// Receive bit rate per agent for full-rate exchange: (N-1)(K+1)^nu * 64 / t_s.
double coefficient_bit_rate(int n_agents, int order, int dims, double sample_time);

/// sum_k Lambda_k [ (1/N) sum_j c_k(x_j) - phi_k ]^2 over [t0erg, t_end].
double collective_ergodicity(const std::vector<TrajectorySegment>& trajectories, const CoefficientVector& phi,
                             const FourierBasis& basis, double t0erg, double t_end);

struct MultiAgentOptions {
    bool normalized_average = false;
    bool parallel = false;
    /// Agents that skip sending at a given step: (step, agent id) pairs.
    std::vector<std::pair<std::int64_t, std::uint32_t>> dropped_messages;
    MessageTransport* transport = nullptr;
};

struct MultiAgentRun {
    std::vector<ClosedLoopRun> agents;
    /// (time, collective metric) at each step boundary.
    std::vector<std::pair<double, double>> collective_series;
    /// Per step: bytes received by each agent.
    std::vector<std::vector<std::uint64_t>> bytes_received;
    std::uint64_t stale_deliveries = 0;
};

MultiAgentRun run_multi_agent(double t0, const std::vector<Eigen::VectorXd>& initial_states, const CoefficientVector& phi,
                              double tf, const ControlAffineSystem& sys, const FourierBasis& basis, const ControllerConfig& cfg,
                              const NominalControl& u_nom, const MultiAgentOptions& options = {});

}  // namespace rhee
