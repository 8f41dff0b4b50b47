#pragma once

#include <cstddef>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "p2p/admm.hpp"
#include "p2p/market_model.hpp"
#include "p2p/solution.hpp"

namespace p2p {

enum class MessageKind { VExchange, QExchange, Trace };

std::string_view to_string(MessageKind kind) noexcept;

struct Message {
  int from = 0;
  int to = 0;
  int round = 0;
  MessageKind kind = MessageKind::VExchange;
  double payload = 0.0;
};

/// Local view of one prosumer. Every per-neighbour vector is indexed by the
/// position of the neighbour in `neighbors` (ascending id).
struct AgentState {
  int id = 0;
  Role role = Role::Buyer;
  double a = 0.0;
  double b = 0.0;
  double p_tr_min = 0.0;
  double p_tr_max = 0.0;
  std::vector<int> neighbors;
  std::vector<double> d;  ///< d_ij
  std::vector<double> p;
  std::vector<double> x;
  std::vector<double> x_prev;
  std::vector<double> u;
  std::vector<double> v;
  std::vector<double> v_recv;  ///< v_ji as received
  std::vector<double> q_recv;  ///< q_j as received
  std::vector<double> lambda;
  double q = 0.0;       ///< last broadcast q_i
  double q_next = 0.0;  ///< Jacobi candidate for the next broadcast
  std::vector<Message> inbox;
  std::vector<Message> outbox;

  std::size_t slot_of(int neighbor_id) const;
};

/// Per-round message accounting.
struct MessageStats {
  std::size_t total = 0;
  std::vector<std::size_t> per_round;
  std::vector<std::size_t> per_outer_iteration;
  std::vector<int> inner_rounds;  ///< Jacobi rounds per outer iteration
  int inner_max_hits = 0;
};

/// Synchronous bus: messages posted during round r are delivered at the
/// round barrier and must be consumed before the next barrier.
class MessageBus {
 public:
  explicit MessageBus(const TradingGraph& graph, bool keep_trace = false);

  /// Moves every agent outbox into the recipients' inboxes, checking that
  /// each message travels along an edge. Throws ProtocolViolation.
  void deliver(std::vector<AgentState>& agents);

  /// Throws ProtocolViolation if any inbox still holds messages.
  void check_drained(const std::vector<AgentState>& agents) const;

  int round() const noexcept { return round_; }
  const MessageStats& stats() const noexcept { return stats_; }
  MessageStats& stats() noexcept { return stats_; }
  const std::vector<Message>& trace() const noexcept { return trace_; }

 private:
  const TradingGraph* graph_;
  bool keep_trace_;
  int round_ = 0;
  MessageStats stats_;
  std::vector<Message> trace_;
};

/// Agents plus the bus connecting them.
class AgentNetwork {
 public:
  AgentNetwork(const Market& market, bool keep_trace = false, int workers = 1);

  std::vector<AgentState>& agents() noexcept { return agents_; }
  const std::vector<AgentState>& agents() const noexcept { return agents_; }
  MessageBus& bus() noexcept { return bus_; }
  const MessageBus& bus() const noexcept { return bus_; }
  int workers() const noexcept { return workers_; }

 private:
  std::vector<AgentState> agents_;
  MessageBus bus_;
  int workers_;
};

/// One round in which every agent sends v_ij to neighbour j.
void exchange_v(AgentNetwork& network);

struct JacobiResult {
  std::vector<double> q;  ///< broadcast q_i per agent
  int rounds = 0;
  std::vector<double> max_delta;  ///< max |q_next - q| per round
  bool hit_max = false;
};

/// Solves (L + Gamma) q = v_hat - v_tilde by Jacobi rounds over the bus,
/// starting from each agent's current q. Stops when max |dq| <= inner_tol
/// or after inner_max rounds. Throws InnerDivergence.
JacobiResult jacobi_totals(AgentNetwork& network, const AdmmConfig& config, double inner_tol = 1e-10,
                           int inner_max = 5000);

struct DecentralizedOptions {
  double inner_tol = 1e-10;
  int inner_max = 5000;
  bool trace_messages = false;
};

struct DecentralizedRun {
  MarketSolution solution;
  MessageStats stats;
  std::vector<Message> message_trace;
};

/// The ADMM of admm.hpp executed agent by agent. The stopping test is
/// evaluated by the harness on gathered iterates. Throws InvalidConfig,
/// ProtocolViolation, InnerDivergence.
DecentralizedRun run_decentralized(const Market& market, const AdmmConfig& config,
                                   const DecentralizedOptions& options = {});

/// CSV with header round,from,to,kind,payload.
void write_message_trace(std::ostream& out, const std::vector<Message>& trace);

}  // namespace p2p
