#include "p2p/decentralized.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>

#include "p2p/parallel.hpp"

namespace p2p {

std::string_view to_string(MessageKind kind) noexcept {
  switch (kind) {
    case MessageKind::VExchange:
      return "v";
    case MessageKind::QExchange:
      return "q";
    case MessageKind::Trace:
      return "trace";
  }
  return "?";
}

std::size_t AgentState::slot_of(int neighbor_id) const {
  const auto it = std::lower_bound(neighbors.begin(), neighbors.end(), neighbor_id);
  if (it == neighbors.end() || *it != neighbor_id) {
    throw MarketError(ErrorCode::ProtocolViolation,
                      "agent " + std::to_string(id) + " got a message from non-neighbour " +
                          std::to_string(neighbor_id));
  }
  return static_cast<std::size_t>(it - neighbors.begin());
}

// BEGIN AGENT-LOCAL
// Everything between these markers runs on one agent and may touch only
// that agent's own state and the messages in its inbox.
namespace {

void agent_compute_v(AgentState& s, const AdmmConfig& c) {
  for (std::size_t k = 0; k < s.neighbors.size(); ++k) {
    s.v[k] = s.b + s.d[k] + c.rho * (-s.x[k] + s.u[k]) - c.phi * s.p[k];
  }
}

void agent_send_v(AgentState& s, int round) {
  for (std::size_t k = 0; k < s.neighbors.size(); ++k) {
    s.outbox.push_back({s.id, s.neighbors[k], round, MessageKind::VExchange, s.v[k]});
  }
}

void agent_send_q(AgentState& s, int round) {
  for (int j : s.neighbors) s.outbox.push_back({s.id, j, round, MessageKind::QExchange, s.q});
}

void agent_read_inbox(AgentState& s) {
  for (const Message& msg : s.inbox) {
    const std::size_t k = s.slot_of(msg.from);
    if (msg.kind == MessageKind::VExchange) {
      s.v_recv[k] = msg.payload;
    } else if (msg.kind == MessageKind::QExchange) {
      s.q_recv[k] = msg.payload;
    }
  }
  s.inbox.clear();
}

// Returns |q_next - q|.
double agent_jacobi_step(AgentState& s, const AdmmConfig& c) {
  double rhs = 0.0;
  double incoming = 0.0;
  double outgoing = 0.0;
  double neigh = 0.0;
  for (std::size_t k = 0; k < s.neighbors.size(); ++k) {
    incoming += s.v_recv[k];
    outgoing += s.v[k];
    neigh += s.q_recv[k];
  }
  rhs = incoming - outgoing;
  const double diag = static_cast<double>(s.neighbors.size()) + (c.rho + c.phi) / s.a;
  s.q_next = (rhs + neigh) / diag;
  return std::abs(s.q_next - s.q);
}

void agent_x_update(AgentState& s, const AdmmConfig& c, std::vector<double>& x_next) {
  const double denom = c.rho + c.psi;
  std::vector<double> y(s.neighbors.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    y[k] = (c.rho * (s.p[k] + s.u[k]) + c.psi * s.x[k]) / denom;
    if (!std::isfinite(y[k])) throw MarketError(ErrorCode::NonFiniteInput, "non-finite iterate");
  }
  x_next.assign(y.size(), 0.0);
  project_prosumer(y, s.role, s.p_tr_min, s.p_tr_max, x_next);
}

void agent_pu_update(AgentState& s, const AdmmConfig& c, const std::vector<double>& x_next) {
  const double denom = 2.0 * (c.rho + c.phi);
  const double step = c.kappa * c.rho;
  for (std::size_t k = 0; k < s.neighbors.size(); ++k) {
    const double own = s.v[k] + s.q;
    const double other = s.v_recv[k] + s.q_recv[k];
    s.p[k] = (other - own) / denom;
    s.lambda[k] = (other + own) / 2.0;
    s.x_prev[k] = s.x[k];
    s.x[k] = x_next[k];
    s.u[k] = s.u[k] + step * (s.p[k] - s.x[k]);
  }
}

}  // namespace
// END AGENT-LOCAL

MessageBus::MessageBus(const TradingGraph& graph, bool keep_trace) : graph_(&graph), keep_trace_(keep_trace) {}

void MessageBus::deliver(std::vector<AgentState>& agents) {
  std::size_t count = 0;
  for (AgentState& sender : agents) {
    for (const Message& msg : sender.outbox) {
      const auto from = graph_->index_of(msg.from);
      const auto to = graph_->index_of(msg.to);
      if (!from || !to || !graph_->adjacent(*from, *to) || msg.from != sender.id) {
        throw MarketError(ErrorCode::ProtocolViolation, "message " + std::to_string(msg.from) + " -> " +
                                                            std::to_string(msg.to) + " does not follow an edge");
      }
      if (msg.round != round_) throw MarketError(ErrorCode::ProtocolViolation, "message tagged with a stale round");
      agents[*to].inbox.push_back(msg);
      if (keep_trace_) trace_.push_back(msg);
      ++count;
    }
    sender.outbox.clear();
  }
  stats_.per_round.push_back(count);
  stats_.total += count;
  ++round_;
}

void MessageBus::check_drained(const std::vector<AgentState>& agents) const {
  for (const AgentState& a : agents) {
    if (!a.inbox.empty()) {
      throw MarketError(ErrorCode::ProtocolViolation, "agent " + std::to_string(a.id) + " left messages unread");
    }
  }
}

AgentNetwork::AgentNetwork(const Market& market, bool keep_trace, int workers)
    : bus_(market.graph(), keep_trace), workers_(workers) {
  const auto& g = market.graph();
  const auto w = g.weights();
  agents_.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Prosumer& pr = market.prosumer(i);
    AgentState& s = agents_[i];
    s.id = pr.id;
    s.role = pr.role;
    s.a = pr.a;
    s.b = pr.b;
    s.p_tr_min = pr.p_tr_min;
    s.p_tr_max = pr.p_tr_max;
    const std::size_t deg = g.degree(i);
    for (std::size_t j : g.neighbors(i)) s.neighbors.push_back(g.id(j));
    s.d.assign(w.begin() + static_cast<std::ptrdiff_t>(g.row_begin(i)),
               w.begin() + static_cast<std::ptrdiff_t>(g.row_end(i)));
    for (auto* vec : {&s.p, &s.x, &s.x_prev, &s.u, &s.v, &s.v_recv, &s.q_recv, &s.lambda}) vec->assign(deg, 0.0);
  }
}

namespace {

template <typename Fn>
void each_agent(AgentNetwork& net, Fn&& fn) {
  auto& agents = net.agents();
  parallel_for(agents.size(), net.workers(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(agents[i]);
  });
}

}  // namespace

void exchange_v(AgentNetwork& network) {
  const int round = network.bus().round();
  each_agent(network, [round](AgentState& s) { agent_send_v(s, round); });
  network.bus().deliver(network.agents());
  each_agent(network, [](AgentState& s) { agent_read_inbox(s); });
  network.bus().check_drained(network.agents());
}

JacobiResult jacobi_totals(AgentNetwork& network, const AdmmConfig& config, double inner_tol, int inner_max) {
  auto& agents = network.agents();
  JacobiResult out;
  std::vector<double> delta(agents.size(), 0.0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    const int round = network.bus().round();
    each_agent(network, [round](AgentState& s) { agent_send_q(s, round); });
    network.bus().deliver(agents);
    auto& a = agents;
    parallel_for(a.size(), network.workers(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        agent_read_inbox(a[i]);
        delta[i] = agent_jacobi_step(a[i], config);
      }
    });
    network.bus().check_drained(agents);
    ++out.rounds;
    double worst = 0.0;
    for (double d : delta) worst = std::max(worst, d);
    out.max_delta.push_back(worst);
    if (!std::isfinite(worst)) throw MarketError(ErrorCode::InnerDivergence, "Jacobi produced a non-finite value");
    if (worst <= inner_tol) break;
    best = std::min(best, worst);
    if (worst > 10.0 * best) {
      throw MarketError(ErrorCode::InnerDivergence, "Jacobi update grew tenfold from its minimum");
    }
    if (out.rounds >= inner_max) {
      out.hit_max = true;
      break;
    }
    for (AgentState& s : agents) s.q = s.q_next;
  }
  // The last broadcast values stay in force so that both ends of a pair
  // use the same q_i and q_j.
  out.q.reserve(agents.size());
  for (const AgentState& s : agents) out.q.push_back(s.q);
  return out;
}

namespace {

AdmmState gather(const AgentNetwork& net, const TradingGraph& g, int iter) {
  AdmmState st = AdmmState::zeros(g);
  st.iter = iter;
  const auto& agents = net.agents();
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const AgentState& s = agents[i];
    const std::size_t base = g.row_begin(i);
    for (std::size_t k = 0; k < s.neighbors.size(); ++k) {
      st.p[base + k] = s.p[k];
      st.x[base + k] = s.x[k];
      st.x_prev[base + k] = s.x_prev[k];
      st.u[base + k] = s.u[k];
      st.lambda[base + k] = s.lambda[k];
    }
  }
  return st;
}

}  // namespace

DecentralizedRun run_decentralized(const Market& market, const AdmmConfig& config,
                                   const DecentralizedOptions& options) {
  config.validate();
  const auto& g = market.graph();
  AgentNetwork net(market, options.trace_messages, config.workers);
  auto& stats = net.bus().stats();

  std::vector<TraceRecord> trace;
  AdmmState best;
  double best_score = std::numeric_limits<double>::infinity();
  bool converged = false;
  int iter = 0;
  std::vector<std::vector<double>> x_next(net.agents().size());
  for (int it = 0; it < config.max_iter; ++it) {
    const std::size_t before = stats.total;
    each_agent(net, [&config](AgentState& s) { agent_compute_v(s, config); });
    exchange_v(net);
    const JacobiResult jr = jacobi_totals(net, config, options.inner_tol, options.inner_max);
    stats.inner_rounds.push_back(jr.rounds);
    if (jr.hit_max) ++stats.inner_max_hits;
    auto& agents = net.agents();
    parallel_for(agents.size(), net.workers(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        agent_x_update(agents[i], config, x_next[i]);
        agent_pu_update(agents[i], config, x_next[i]);
      }
    });
    stats.per_outer_iteration.push_back(stats.total - before);
    ++iter;

    AdmmState st = gather(net, g, iter);
    const auto check = check_convergence(st, config, g.size());
    trace.push_back(check.record);
    if (check.status == Convergence::Converged) {
      best = std::move(st);
      converged = true;
      break;
    }
    const double score = std::max(check.record.primal_residual / check.record.eps_pri,
                                  check.record.dual_residual / check.record.eps_dual);
    if (score < best_score) {
      best_score = score;
      best = std::move(st);
    }
  }

  DecentralizedRun out;
  out.solution = summarize(market, best.p, best.lambda);
  out.solution.iterations = iter;
  out.solution.status = converged ? SolveStatus::Converged : SolveStatus::MaxIterExceeded;
  out.solution.trace = std::move(trace);
  out.solution.method = "decentralized";
  out.stats = stats;
  out.message_trace = net.bus().trace();
  return out;
}

void write_message_trace(std::ostream& out, const std::vector<Message>& trace) {
  out << "round,from,to,kind,payload\n";
  out << std::setprecision(17);
  for (const Message& m : trace) {
    out << m.round << ',' << m.from << ',' << m.to << ',' << to_string(m.kind) << ',' << m.payload << '\n';
  }
}

}  // namespace p2p
