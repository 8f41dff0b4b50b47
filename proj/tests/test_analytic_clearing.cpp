#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "oracles.hpp"
#include "p2p/analytic_clearing.hpp"

using namespace p2p;

namespace {

constexpr double kWide = 1e6;

std::vector<std::pair<int, int>> complete_minus_16() {
  std::vector<std::pair<int, int>> e;
  for (int b : {4, 5, 6}) {
    for (int s : {1, 2, 3}) {
      if (!(b == 6 && s == 1)) e.emplace_back(b, s);
    }
  }
  return e;
}

std::vector<Prosumer> widen(std::vector<Prosumer> ps) {
  for (auto& p : ps) {
    if (p.role == Role::Seller) {
      p.p_tr_min = -kWide;
    } else {
      p.p_tr_max = kWide;
    }
  }
  return ps;
}

double balance(const std::vector<double>& t) {
  double s = 0.0;
  for (double v : t) s += v;
  return s;
}

}  // namespace

TEST_CASE("interior formula on the symmetric two-prosumer case") {
  std::vector<Prosumer> ps{make_prosumer(1, Role::Seller, 0.01, 10, -kWide, 0),
                           make_prosumer(2, Role::Buyer, 0.01, 2, 0, kWide)};
  const auto sol = interior_pool_clearing(ps);
  CHECK(sol.price == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(sol.totals[0] == doctest::Approx(-200.0).epsilon(1e-12));
  CHECK(sol.totals[1] == doctest::Approx(200.0).epsilon(1e-12));
}

TEST_CASE("equal b gives no trade") {
  std::vector<Prosumer> ps{make_prosumer(1, Role::Seller, 0.02, 5, -10, 0),
                           make_prosumer(2, Role::Buyer, 0.01, 5, 0, 10),
                           make_prosumer(3, Role::Buyer, 0.03, 5, 0, 10)};
  const auto sol = interior_pool_clearing(ps);
  CHECK(sol.price == doctest::Approx(5.0));
  for (double t : sol.totals) CHECK(t == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(interior_pool_clearing(std::vector<Prosumer>{}), MarketError);
}

TEST_CASE("bounded pool clearing of the six-prosumer market") {
  const auto ps = gen::base_prosumers();
  const auto sol = uniform_price_clearing(ps);
  CHECK(sol.price == doctest::Approx(6.392).epsilon(1e-9));
  const std::vector<double> expect{-105, 0, -90, 100, 0, 95};
  for (std::size_t i = 0; i < 6; ++i) CHECK(sol.totals[i] == doctest::Approx(expect[i]).epsilon(1e-9));
  CHECK(std::abs(balance(sol.totals)) < 1e-6);
  CHECK(sol.binding[0] == Binding::AtMin);
  CHECK(sol.binding[1] == Binding::Exited);
  CHECK(sol.binding[2] == Binding::Interior);
  CHECK(sol.binding[3] == Binding::AtMax);
  // interior prosumers sit on the price
  CHECK(2 * ps[2].a * sol.totals[2] + ps[2].b == doctest::Approx(sol.price).epsilon(1e-9));
  CHECK(sol.price == doctest::Approx(oracle::pool_price(ps)).epsilon(1e-9));
}

TEST_CASE("pool clearing with prosumer 2 turned buyer") {
  auto ps = gen::base_prosumers();
  ps[1] = make_prosumer(2, Role::Buyer, 0.0074, 3.53, 0.01, 115);
  const auto sol = uniform_price_clearing(ps);
  CHECK(sol.price == doctest::Approx(4.5809).epsilon(1e-4));
  CHECK(sol.totals[1] == doctest::Approx(70.95).epsilon(1e-3));
  CHECK(sol.totals[5] == doctest::Approx(58.95).epsilon(1e-3));
  CHECK(sol.totals[2] == doctest::Approx(-125.0).epsilon(1e-12));
}

TEST_CASE("no rational trade leaves both prosumers out") {
  std::vector<Prosumer> ps{make_prosumer(1, Role::Seller, 0.01, 2, -50, 0),
                           make_prosumer(2, Role::Buyer, 0.01, 10, 0, 50)};
  const auto sol = uniform_price_clearing(ps);
  CHECK(sol.totals[0] == 0.0);
  CHECK(sol.totals[1] == 0.0);
  CHECK(sol.binding[0] == Binding::Exited);
  CHECK(sol.binding[1] == Binding::Exited);
  CHECK(sol.degenerate);
  CHECK(sol.price == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("aggregate response is nondecreasing in the price") {
  gen::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ps = gen::random_prosumers(rng, rng.integer(1, 4), rng.integer(1, 4));
    double last = -std::numeric_limits<double>::infinity();
    for (double price = -5; price <= 20; price += 0.05) {
      const double r = aggregate_response(ps, price);
      CHECK(r >= last - 1e-12);
      last = r;
    }
  }
}

TEST_CASE("exhaustive QP on a single unbounded edge") {
  for (const auto& [bs, bb] : {std::pair{9.0, 3.0}, std::pair{3.0, 9.0}}) {
    std::vector<Prosumer> ps{make_prosumer(1, Role::Seller, 0.02, bs, -kWide, 0),
                             make_prosumer(2, Role::Buyer, 0.01, bb, 0, kWide)};
    std::vector<std::pair<int, int>> e{{2, 1}};
    const auto sol = kkt_active_set_qp(Market(ps, e));
    const double expect = std::max(0.0, (bs - bb) / (2 * 0.01 + 2 * 0.02));
    CHECK(sol.totals[1] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(sol.pair_powers[0] == -sol.pair_powers[1]);
    CHECK(sol.pair_prices[0] == sol.pair_prices[1]);
  }
}

TEST_CASE("exhaustive QP agrees with the pool on the complete six-prosumer graph") {
  const auto ps = gen::base_prosumers();
  const Market m(ps, complete_bipartite_edges(ps));
  const auto qp = kkt_active_set_qp(m);
  const auto pool = uniform_price_clearing(ps);
  for (std::size_t i = 0; i < 6; ++i) CHECK(qp.totals[i] == doctest::Approx(pool.totals[i]).epsilon(1e-9));
  REQUIRE(qp.clusters.size() == 1);
  CHECK(qp.clusters[0].price == doctest::Approx(6.392).epsilon(1e-9));
  CHECK(qp.clusters[0].price_spread < 1e-6);
  CHECK(qp.status == SolveStatus::Exact);
}

TEST_CASE("exhaustive QP with trade weights") {
  const auto ps = gen::base_prosumers();
  const Market m(ps, complete_bipartite_edges(ps), gen::base_weights());
  const auto sol = kkt_active_set_qp(m);
  const auto& g = m.graph();
  const auto p = [&](int i, int j) { return sol.pair_powers[*g.pair_slot(*g.index_of(i), *g.index_of(j))]; };
  CHECK(p(6, 1) == doctest::Approx(5.1).epsilon(0.5 / 5.1));
  CHECK(p(6, 3) == doctest::Approx(90.1).epsilon(0.5 / 90.1));
  CHECK(p(4, 1) == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(std::abs(balance(sol.totals)) < 1e-6);
  for (std::size_t k = 0; k < g.num_pairs(); ++k) {
    CHECK(sol.pair_powers[k] == -sol.pair_powers[g.reverse(k)]);
    CHECK(sol.pair_prices[k] == sol.pair_prices[g.reverse(k)]);
  }
}

TEST_CASE("exhaustive QP refuses large graphs") {
  gen::Rng rng(1);
  const auto ps = gen::random_prosumers(rng, 5, 4);
  const Market m(ps, complete_bipartite_edges(ps));
  CHECK_THROWS_AS(kkt_active_set_qp(m), MarketError);
  try {
    kkt_active_set_qp(m);
  } catch (const MarketError& e) {
    CHECK(e.code() == ErrorCode::TooLarge);
  }
}

TEST_CASE("clusters after removing edge 1-6") {
  const auto ps = gen::base_prosumers();
  const auto e = complete_minus_16();
  const auto sol = clustered_clearing(Market(ps, e));
  REQUIRE(sol.clusters.size() == 2);
  CHECK(sol.clusters[0].members == std::vector<int>{1, 4});
  CHECK(sol.clusters[0].price == doctest::Approx(8.09).epsilon(1e-9));
  CHECK(sol.clusters[1].members == std::vector<int>{3, 6});
  CHECK(sol.clusters[1].price == doctest::Approx(6.326).epsilon(1e-9));
  CHECK(sol.non_traders == std::vector<int>{2, 5});
  CHECK(sol.totals[0] == doctest::Approx(-100).epsilon(1e-9));
  CHECK(sol.totals[5] == doctest::Approx(95).epsilon(1e-9));
}

TEST_CASE("clustered clearing edge cases") {
  SUBCASE("no rational trade") {
    std::vector<Prosumer> ps{make_prosumer(1, Role::Seller, 0.01, 2, -50, 0),
                             make_prosumer(2, Role::Buyer, 0.01, 10, 0, 50)};
    std::vector<std::pair<int, int>> e{{2, 1}};
    const auto sol = clustered_clearing(Market(ps, e));
    CHECK(sol.clusters.empty());
    CHECK(sol.non_traders.size() == 2);
  }
  SUBCASE("weights are refused") {
    const auto ps = gen::base_prosumers();
    CHECK_THROWS_AS(clustered_clearing(Market(ps, complete_bipartite_edges(ps), gen::base_weights())), MarketError);
  }
}

TEST_CASE("connected realized graphs clear at the pool price") {
  gen::Rng rng(21);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 30; ++trial) {
    const auto ps = gen::random_prosumers(rng, rng.integer(1, 4), rng.integer(1, 4));
    const auto sol = clustered_clearing(Market(ps, complete_bipartite_edges(ps)));
    if (sol.clusters.size() != 1) continue;
    const auto pool = uniform_price_clearing(ps);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(sol.totals[i] == doctest::Approx(pool.totals[i]).epsilon(1e-9));
    CHECK(sol.clusters[0].price == doctest::Approx(pool.price).epsilon(1e-6));
    ++checked;
  }
  CHECK(checked == 30);
}

TEST_CASE("interior formula matches the exhaustive QP on interior instances") {
  gen::Rng rng(8);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 25; ++trial) {
    const auto ps = widen(gen::random_prosumers(rng, rng.integer(1, 4), rng.integer(1, 4)));
    const auto t1 = interior_pool_clearing(ps);
    bool interior = true;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      interior = interior && (ps[i].role == Role::Buyer ? t1.totals[i] > 1e-3 : t1.totals[i] < -1e-3);
    }
    if (!interior) continue;
    const auto qp = kkt_active_set_qp(Market(ps, complete_bipartite_edges(ps)));
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(qp.totals[i] == doctest::Approx(t1.totals[i]).epsilon(1e-8));
    ++checked;
  }
  CHECK(checked == 25);
}

TEST_CASE("weighted totals system") {
  SUBCASE("zero weights reduce to the interior formula") {
    gen::Rng rng(4);
    const auto ps = widen(gen::random_prosumers(rng, 3, 3));
    const auto e = complete_bipartite_edges(ps);
    const auto t = weighted_totals_system(Market(ps, e));
    const auto t1 = interior_pool_clearing(ps);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(t[i] == doctest::Approx(t1.totals[i]).epsilon(1e-8));
  }
  SUBCASE("symmetric weights cancel") {
    std::vector<Prosumer> ps{make_prosumer(1, Role::Seller, 0.01, 10, -kWide, 0),
                             make_prosumer(2, Role::Buyer, 0.01, 2, 0, kWide)};
    std::vector<std::pair<int, int>> e{{1, 2}};
    const auto plain = weighted_totals_system(Market(ps, e));
    const auto weighted = weighted_totals_system(Market(ps, e, WeightMap{{{1, 2}, 0.7}, {{2, 1}, 0.7}}));
    CHECK(plain[0] == doctest::Approx(weighted[0]).epsilon(1e-12));
    CHECK(plain[1] == doctest::Approx(200.0).epsilon(1e-9));
  }
  SUBCASE("tree-shaped weighted graphs match the exhaustive QP without bounds") {
    // Trees have no cycles, so the stacked system is consistent whenever the
    // optimum is interior.
    gen::Rng rng(17);
    int checked = 0;
    for (int trial = 0; trial < 300 && checked < 10; ++trial) {
      const auto ps = widen(gen::random_prosumers(rng, 3, 3));
      auto all = complete_bipartite_edges(ps);
      std::shuffle(all.begin(), all.end(), rng.engine);
      std::vector<std::pair<int, int>> tree;
      std::vector<int> comp(7);
      std::iota(comp.begin(), comp.end(), 0);
      const auto root = [&](int x) {
        while (comp[static_cast<std::size_t>(x)] != x) x = comp[static_cast<std::size_t>(x)];
        return x;
      };
      for (const auto& [u, v] : all) {
        if (root(u) != root(v)) {
          comp[static_cast<std::size_t>(root(u))] = root(v);
          tree.emplace_back(u, v);
        }
      }
      const Market m(ps, tree, gen::random_weights(rng, tree, 0.5));
      const auto qp = kkt_active_set_qp(m);
      bool interior = true;
      for (std::size_t k = 0; k < qp.pair_powers.size(); ++k) interior = interior && std::abs(qp.pair_powers[k]) > 1e-6;
      if (!interior) continue;
      const auto t = weighted_totals_system(m);
      for (std::size_t i = 0; i < ps.size(); ++i) CHECK(t[i] == doctest::Approx(qp.totals[i]).epsilon(1e-7));
      ++checked;
    }
    CHECK(checked == 10);
  }
  SUBCASE("the full weighted graph has no interior solution") {
    const auto ps = widen(gen::base_prosumers());
    try {
      weighted_totals_system(Market(ps, complete_bipartite_edges(ps), gen::base_weights()));
      FAIL("expected InteriorAssumptionFails");
    } catch (const MarketError& e) {
      CHECK(e.code() == ErrorCode::InteriorAssumptionFails);
    }
  }
  SUBCASE("disconnected graphs are solved per component") {
    const auto ps = widen(gen::base_prosumers());
    std::vector<std::pair<int, int>> e{{4, 1}, {6, 3}};
    const auto t = weighted_totals_system(Market(ps, e));
    CHECK(t[0] + t[3] == doctest::Approx(0.0).scale(1.0));
    CHECK(t[2] + t[5] == doctest::Approx(0.0).scale(1.0));
    CHECK(t[1] == 0.0);
    CHECK(t[4] == 0.0);
  }
}

TEST_CASE("oracle picks the pool on complete unweighted graphs") {
  const auto ps = gen::base_prosumers();
  const Market m(ps, complete_bipartite_edges(ps));
  const auto sol = oracle_clear(m);
  const auto qp = kkt_active_set_qp(m);
  for (std::size_t i = 0; i < 6; ++i) CHECK(sol.totals[i] == doctest::Approx(qp.totals[i]).epsilon(1e-9));
  const auto& g = m.graph();
  for (std::size_t k = 0; k < g.num_pairs(); ++k) CHECK(sol.pair_powers[k] == -sol.pair_powers[g.reverse(k)]);
  CHECK(sol.method == "oracle");
  const Market empty(ps, std::vector<std::pair<int, int>>{});
  const auto none = oracle_clear(empty);
  for (double t : none.totals) CHECK(t == 0.0);
}
