#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <regex>
#include <sstream>

#include "oracles.hpp"
#include "p2p/admm.hpp"
#include "p2p/decentralized.hpp"

using namespace p2p;

namespace {

Market two_agent(double a) {
  std::vector<Prosumer> ps{make_prosumer(1, Role::Seller, a, 10, -1000, 0),
                           make_prosumer(2, Role::Buyer, a, 2, 0, 1000)};
  std::vector<std::pair<int, int>> e{{2, 1}};
  return Market(ps, e);
}

Market base_market() {
  const auto ps = gen::base_prosumers();
  return Market(ps, complete_bipartite_edges(ps));
}

// Loads v into the agents and its transposed view into v_recv without messages.
void seed_v(AgentNetwork& net, const Market& m, const PairVector& v) {
  const auto& g = m.graph();
  for (std::size_t i = 0; i < g.size(); ++i) {
    auto& s = net.agents()[i];
    for (std::size_t k = 0; k < s.neighbors.size(); ++k) {
      const std::size_t slot = g.row_begin(i) + k;
      s.v[k] = v[slot];
      s.v_recv[k] = v[g.reverse(slot)];
    }
  }
}

}  // namespace

TEST_CASE("Jacobi on the smallest system") {
  const Market m = two_agent(0.5);
  AdmmConfig c;
  c.rho = 0.4;
  c.phi = 0.6;
  c.psi = 0.6;
  AgentNetwork net(m);
  net.agents()[0].v_recv[0] = 4.0;  // rhs_0 = 4
  net.agents()[1].v[0] = 4.0;       // rhs_1 = -4
  const auto jr = jacobi_totals(net, c);
  CHECK(jr.rounds <= 60);
  CHECK_FALSE(jr.hit_max);
  CHECK(jr.q[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(jr.q[1] == doctest::Approx(-1.0).epsilon(1e-9));
  // two scalar messages per round
  CHECK(net.bus().stats().total == 2 * static_cast<std::size_t>(jr.rounds));
  for (std::size_t r = 1; r + 1 < jr.max_delta.size(); ++r) {
    if (jr.max_delta[r - 1] > 1e-13) CHECK(jr.max_delta[r] <= jr.max_delta[r - 1] / 3.0 * (1 + 1e-6) + 1e-15);
  }
}

TEST_CASE("isolated agent settles at zero in one round") {
  std::vector<Prosumer> ps{make_prosumer(1, Role::Buyer, 0.01, 3, 0, 10)};
  const Market m(ps, std::vector<std::pair<int, int>>{});
  AgentNetwork net(m);
  const auto jr = jacobi_totals(net, AdmmConfig{});
  CHECK(jr.rounds == 1);
  CHECK(jr.q[0] == 0.0);
}

TEST_CASE("Jacobi agrees with the direct solve and contracts") {
  gen::Rng rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const auto ps = gen::random_prosumers(rng, rng.integer(1, 5), rng.integer(1, 5));
    const Market m(ps, gen::random_edges(rng, ps, 25, 0.6));
    const auto& g = m.graph();
    AdmmConfig c;
    PairVector v(g.num_pairs());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = rng.uniform(-10, 10);
    AgentNetwork net(m);
    seed_v(net, m, v);
    const auto jr = jacobi_totals(net, c, 1e-13, 100000);
    const auto direct = solve_totals(v, m, c);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(jr.q[i] - direct[i]) < 1e-8);

    double factor = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double n = static_cast<double>(g.degree(i));
      factor = std::max(factor, n / (n + (c.rho + c.phi) / ps[i].a));
    }
    for (std::size_t r = 1; r < jr.max_delta.size(); ++r) {
      if (jr.max_delta[r - 1] < 1e-10) break;
      CHECK(jr.max_delta[r] <= factor * jr.max_delta[r - 1] * (1 + 1e-6));
    }
  }
}

TEST_CASE("decentralized run matches the central engine on the six-prosumer market") {
  const Market m = base_market();
  const AdmmConfig c;
  DecentralizedOptions opt;
  opt.trace_messages = true;
  const auto dec = run_decentralized(m, c, opt);
  const auto cen = run(m, c);
  CHECK(dec.solution.status == SolveStatus::Converged);
  CHECK(dec.solution.method == "decentralized");
  CHECK(dec.solution.iterations == cen.solution.iterations);
  for (std::size_t k = 0; k < m.graph().num_pairs(); ++k) {
    CHECK(std::abs(dec.solution.pair_powers[k] - cen.solution.pair_powers[k]) < 1e-6);
  }
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(dec.solution.totals[i] - cen.solution.totals[i]) < 1e-6);

  const std::size_t pairs = m.graph().num_pairs();
  CHECK(pairs == 18);
  REQUIRE(dec.stats.per_outer_iteration.size() == dec.stats.inner_rounds.size());
  std::size_t sum = 0;
  for (std::size_t t = 0; t < dec.stats.per_outer_iteration.size(); ++t) {
    CHECK(dec.stats.per_outer_iteration[t] == pairs + pairs * static_cast<std::size_t>(dec.stats.inner_rounds[t]));
    sum += dec.stats.per_outer_iteration[t];
  }
  CHECK(sum == dec.stats.total);
  CHECK(dec.message_trace.size() == dec.stats.total);
  CHECK(dec.stats.inner_max_hits == 0);

  // every logged message follows an edge and carries its round
  const auto& g = m.graph();
  for (const auto& msg : dec.message_trace) {
    CHECK(g.adjacent(*g.index_of(msg.from), *g.index_of(msg.to)));
    CHECK(msg.round >= 0);
  }
  std::ostringstream csv;
  write_message_trace(csv, std::vector<Message>(dec.message_trace.begin(), dec.message_trace.begin() + 3));
  const std::string text = csv.str();
  CHECK(text.rfind("round,from,to,kind,payload\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}

TEST_CASE("decentralized run matches on weighted and sparse instances") {
  gen::Rng rng(31);
  for (int trial = 0; trial < 4; ++trial) {
    const auto ps = gen::random_prosumers(rng, rng.integer(1, 4), rng.integer(1, 4));
    const auto edges = gen::random_edges(rng, ps, 16, 0.7);
    const Market m(ps, edges, gen::random_weights(rng, edges, 0.5));
    AdmmConfig c;
    c.max_iter = 3000;
    const auto dec = run_decentralized(m, c);
    const auto cen = run(m, c);
    for (std::size_t k = 0; k < m.graph().num_pairs(); ++k) {
      CHECK(std::abs(dec.solution.pair_powers[k] - cen.solution.pair_powers[k]) < 1e-6);
    }
  }
}

TEST_CASE("no edges means no messages and no trade") {
  const auto ps = gen::base_prosumers();
  const Market m(ps, std::vector<std::pair<int, int>>{});
  const auto dec = run_decentralized(m, AdmmConfig{});
  CHECK(dec.stats.total == 0);
  for (double t : dec.solution.totals) CHECK(t == 0.0);
  CHECK(dec.solution.status == SolveStatus::Converged);
}

TEST_CASE("the bus rejects messages off the graph") {
  const auto ps = gen::base_prosumers();
  std::vector<std::pair<int, int>> e{{4, 1}, {5, 2}};
  const Market m(ps, e);
  AgentNetwork net(m);
  SUBCASE("non-edge") {
    net.agents()[0].outbox.push_back({1, 5, 0, MessageKind::VExchange, 1.0});
    try {
      net.bus().deliver(net.agents());
      FAIL("expected ProtocolViolation");
    } catch (const MarketError& err) {
      CHECK(err.code() == ErrorCode::ProtocolViolation);
    }
  }
  SUBCASE("forged sender") {
    net.agents()[0].outbox.push_back({2, 5, 0, MessageKind::VExchange, 1.0});
    CHECK_THROWS_AS(net.bus().deliver(net.agents()), MarketError);
  }
  SUBCASE("stale round") {
    net.agents()[0].outbox.push_back({1, 4, 7, MessageKind::VExchange, 1.0});
    CHECK_THROWS_AS(net.bus().deliver(net.agents()), MarketError);
  }
  SUBCASE("unread inbox") {
    net.agents()[0].outbox.push_back({1, 4, 0, MessageKind::VExchange, 1.0});
    net.bus().deliver(net.agents());
    CHECK_THROWS_AS(net.bus().check_drained(net.agents()), MarketError);
  }
  SUBCASE("exchange leaves every inbox empty") {
    exchange_v(net);
    CHECK_NOTHROW(net.bus().check_drained(net.agents()));
    CHECK(net.bus().stats().per_round.back() == 4);
  }
  CHECK_THROWS_AS(net.agents()[0].slot_of(5), MarketError);
}

TEST_CASE("agent-local code touches no global structure") {
  std::ifstream in(std::string(P2P_SOURCE_DIR) + "/src/decentralized.cpp");
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto begin = text.find("// BEGIN AGENT-LOCAL");
  const auto end = text.find("// END AGENT-LOCAL");
  REQUIRE(begin != std::string::npos);
  REQUIRE(end != std::string::npos);
  REQUIRE(begin < end);
  std::string region = text.substr(begin, end - begin);
  // drop comments before scanning
  region = std::regex_replace(region, std::regex("//[^\n]*"), "");
  for (const std::string token : {"Market", "market", "TradingGraph", "graph", "agents", "AgentNetwork",
                                   "MessageBus", "PairVector", "AdmmState", "static"}) {
    INFO("token: " << token);
    CHECK_FALSE(std::regex_search(region, std::regex("\\b" + token + "\\b")));
  }
  // functions in the region take one AgentState by reference
  const std::regex sig(R"(\n(?:void|double)\s+agent_\w+\(([^)]*)\))");
  int count = 0;
  for (auto it = std::sregex_iterator(region.begin(), region.end(), sig); it != std::sregex_iterator(); ++it) {
    const std::string params = (*it)[1];
    CHECK(params.find("AgentState& s") != std::string::npos);
    CHECK(std::count(params.begin(), params.end(), '&') <= 3);
    ++count;
  }
  CHECK(count >= 6);
}
