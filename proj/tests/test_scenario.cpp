#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "p2p/analytic_clearing.hpp"
#include "p2p/output.hpp"
#include "p2p/scenario.hpp"

using namespace p2p;
namespace fs = std::filesystem;

namespace {

fs::path scenario_path(int k) {
  return fs::path(P2P_SOURCE_DIR) / "scenarios" / ("scenario" + std::to_string(k) + ".json");
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("p2p_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const MarketError& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::InvariantViolation;
}

}  // namespace

TEST_CASE("bundled scenarios load and validate") {
  for (int k = 1; k <= 6; ++k) {
    INFO("scenario " << k);
    const auto spec = load_scenario(scenario_path(k));
    CHECK(spec.prosumers.size() == 6);
    CHECK_NOTHROW(validate_scenario(spec));
    const Market m = build_step_market(spec, 0);
    CHECK(m.size() == 6);
  }
  const auto s1 = load_scenario(scenario_path(1));
  CHECK(s1.method == Method::Oracle);
  CHECK(s1.prosumers[0].a == 0.0031);
  CHECK(s1.prosumers[0].p_tr_max == -0.01);  // raw value kept in the spec
  CHECK(build_step_market(s1, 0).prosumer(0).p_tr_max == 0.0);
  CHECK(build_step_market(load_scenario(scenario_path(3)), 0).graph().num_edges() == 8);
  CHECK(build_step_market(load_scenario(scenario_path(5)), 0).graph().has_weights());
  CHECK(load_scenario(scenario_path(4)).prosumers[1].role == Role::Buyer);
  const auto s6 = load_scenario(scenario_path(6));
  REQUIRE(s6.learning.has_value());
  CHECK(s6.learning->policy.delta_b == 0.5);
}

TEST_CASE("schema errors are reported") {
  const fs::path dir = scratch("schema");
  auto doc = scenario_to_json(load_scenario(scenario_path(2)));

  SUBCASE("empty prosumer list") {
    auto d = doc;
    d["prosumers"] = nlohmann::json::array();
    CHECK(code_of([&] { validate_scenario(scenario_from_json(d)); }) == ErrorCode::ValidationError);
  }
  SUBCASE("weight on a missing edge") {
    auto d = doc;
    d["complete_bipartite"] = false;
    d["edges"] = nlohmann::json::array({nlohmann::json::array({4, 1})});
    d["weights"] = nlohmann::json::array({{{"from", 6}, {"to", 1}, {"d", 0.3}}});
    CHECK(code_of([&] { validate_scenario(scenario_from_json(d)); }) == ErrorCode::ValidationError);
  }
  SUBCASE("unknown key") {
    auto d = doc;
    d["rhoo"] = 1;
    CHECK(code_of([&] { scenario_from_json(d); }) == ErrorCode::ValidationError);
  }
  SUBCASE("bad role") {
    auto d = doc;
    d["prosumers"][0]["role"] = "trader";
    CHECK(code_of([&] { scenario_from_json(d); }) == ErrorCode::ValidationError);
  }
  SUBCASE("malformed JSON") {
    write(dir / "broken.json", "{\n  \"name\": \"x\",\n  \"prosumers\": [\n");
    try {
      load_scenario(dir / "broken.json");
      FAIL("expected ParseError");
    } catch (const MarketError& e) {
      CHECK(e.code() == ErrorCode::ParseError);
      CHECK(std::string(e.what()).find("line") != std::string::npos);
    }
  }
  SUBCASE("bad admm settings") {
    auto d = doc;
    d["admm"]["phi"] = 0.019;
    CHECK(code_of([&] { validate_scenario(scenario_from_json(d)); }) == ErrorCode::ValidationError);
  }
  SUBCASE("missing file") {
    CHECK(code_of([&] { load_scenario(dir / "nope.json"); }) == ErrorCode::ParseError);
  }
}

TEST_CASE("scenario files round trip") {
  const fs::path dir = scratch("roundtrip");
  for (int k = 1; k <= 6; ++k) {
    const auto spec = load_scenario(scenario_path(k));
    write_scenario(spec, dir / "copy.json");
    CHECK(load_scenario(dir / "copy.json") == spec);
  }
  auto feeder = generate_feeder(feeder_of_size(55, 3));
  feeder.steps.resize(3);
  feeder.steps[1].ramps.push_back({feeder.prosumers[0].id, -2.0, 2.0});
  write_scenario(feeder, dir / "feeder.json");
  CHECK(load_scenario(dir / "feeder.json") == feeder);
}

TEST_CASE("ramp limits intersect with the step bounds") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(merge_ramp_bounds(0, 100, 50, -inf, inf) == std::pair{0.0, 100.0});
  CHECK(merge_ramp_bounds(0, 100, 50, -10, 10) == std::pair{40.0, 60.0});
  CHECK(code_of([] { merge_ramp_bounds(0, 90, 100, -5, 5); }) == ErrorCode::EmptyFeasibleInterval);
  CHECK(code_of([] { merge_ramp_bounds(0, 90, 10, 5, -5); }) == ErrorCode::RangeError);

  auto spec = load_scenario(scenario_path(2));
  spec.steps.resize(2);
  spec.steps[1].ramps.push_back({4, -10, 10});
  const std::vector<double> prev{-105, 0, -90, 50, 0, 95};
  const Market m = build_step_market(spec, 1, &prev);
  CHECK(m.prosumer(3).p_tr_min == 40.0);
  CHECK(m.prosumer(3).p_tr_max == 60.0);
  const auto sol = oracle_clear(m);
  CHECK(sol.totals[3] >= 40.0 - 1e-9);
  CHECK(sol.totals[3] <= 60.0 + 1e-9);
}

TEST_CASE("feeder generation") {
  SUBCASE("default feeder at noon") {
    const auto spec = generate_feeder(FeederSpec{});
    CHECK(spec.num_steps() == 24);
    const Market noon = build_step_market(spec, 12);
    std::size_t sellers = 0;
    for (const auto& p : noon.prosumers()) sellers += p.role == Role::Seller ? 1 : 0;
    CHECK(noon.size() == 55);
    CHECK(sellers == 25);
    CHECK(noon.size() - sellers == 30);
    CHECK(noon.graph().num_pairs() == 1500);
    CHECK(noon.graph().num_edges() == 750);
    for (const auto& p : noon.prosumers()) {
      CHECK(p.a >= 0.005);
      CHECK(p.a <= 0.009);
      CHECK(p.b >= 12.4);
      CHECK(p.b <= 31.2);
      CHECK(p.p_tr_min <= 0.0);
      CHECK(p.p_tr_max >= 0.0);
    }
    // bounds follow the net position at that step
    const auto& gen_kw = spec.metadata.at("generation_kw");
    const auto& dem_kw = spec.metadata.at("demand_kw");
    for (std::size_t i = 0; i < noon.size(); ++i) {
      const auto& p = noon.prosumer(i);
      const auto idx = static_cast<std::size_t>(p.id - 1);
      const double net = gen_kw.at(idx).at(12).get<double>() - dem_kw.at(idx).at(12).get<double>();
      if (p.role == Role::Seller) {
        CHECK(p.p_tr_min == doctest::Approx(-net));
      } else {
        CHECK(p.p_tr_max == doctest::Approx(-net));
      }
    }
    for (std::size_t t = 0; t < spec.num_steps(); ++t) CHECK_NOTHROW(build_step_market(spec, t));
  }
  SUBCASE("seeded generation is deterministic") {
    const auto a = scenario_to_json(generate_feeder(feeder_of_size(55, 7))).dump();
    const auto b = scenario_to_json(generate_feeder(feeder_of_size(55, 7))).dump();
    const auto c = scenario_to_json(generate_feeder(feeder_of_size(55, 8))).dump();
    CHECK(a == b);
    CHECK(a != c);
  }
  SUBCASE("larger feeders keep the seller share") {
    for (const auto& [n, s] : {std::pair{165, 75}, std::pair{330, 150}}) {
      const FeederSpec fs_ = feeder_of_size(n);
      CHECK(fs_.solar_nodes == s);
      const Market noon = build_step_market(generate_feeder(fs_), 12);
      std::size_t sellers = 0;
      for (const auto& p : noon.prosumers()) sellers += p.role == Role::Seller ? 1 : 0;
      CHECK(sellers == static_cast<std::size_t>(s));
      CHECK(noon.graph().num_edges() == static_cast<std::size_t>(s * (n - s)));
    }
  }
  SUBCASE("invalid feeder settings") {
    FeederSpec bad;
    bad.a_min = -1;
    CHECK(code_of([&] { generate_feeder(bad); }) == ErrorCode::RangeError);
    FeederSpec too_many;
    too_many.solar_nodes = 60;
    CHECK(code_of([&] { generate_feeder(too_many); }) == ErrorCode::RangeError);
  }
}

TEST_CASE("running a scenario writes consistent outputs") {
  const fs::path dir = scratch("run2");
  const auto spec = load_scenario(scenario_path(2));
  const auto report = run_scenario(spec, dir);
  REQUIRE(report.steps.size() == 1);
  CHECK(report.all_converged);
  for (const char* f : {"solution_t0.csv", "totals_t0.csv", "trace_t0.csv", "summary.json"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  const auto& step = summary.at("steps").at(0);
  REQUIRE(step.at("clusters").size() == 1);
  CHECK(std::abs(step.at("clusters").at(0).at("price").get<double>() - 6.39) < 0.01);
  CHECK(step.at("iterations").get<int>() > 0);
  CHECK(step.at("iterations").get<int>() < spec.admm.max_iter);
  const std::map<std::string, double> expect{{"1", -105}, {"2", 0}, {"3", -90}, {"4", 100}, {"5", 0}, {"6", 95}};
  for (const auto& [id, t] : expect) CHECK(std::abs(step.at("totals").at(id).get<double>() - t) < 1.0);

  // re-read pair file: antisymmetric powers, symmetric prices, balanced totals
  const auto rows = read_solution_csv(dir / "solution_t0.csv");
  CHECK(rows.size() == 18);
  std::map<std::pair<int, int>, SolutionRow> by_pair;
  for (const auto& r : rows) by_pair[{r.pair_i, r.pair_j}] = r;
  const Market m = build_step_market(spec, 0);
  const auto& sol = report.steps[0].solution;
  double balance = 0.0;
  for (const auto& r : rows) {
    const auto& back = by_pair.at({r.pair_j, r.pair_i});
    CHECK(r.power_kw == -back.power_kw);
    CHECK(r.price == back.price);
    const auto& g = m.graph();
    const auto slot = *g.pair_slot(*g.index_of(r.pair_i), *g.index_of(r.pair_j));
    CHECK(std::abs(r.power_kw - sol.pair_powers[slot]) <= 1e-9 * (1 + std::abs(sol.pair_powers[slot])));
    balance += r.power_kw;
  }
  CHECK(std::abs(balance) < 1e-9);

  const std::string totals = slurp(dir / "totals_t0.csv");
  CHECK(totals.rfind("prosumer,role,total_kw,success\n", 0) == 0);
  const std::string trace = slurp(dir / "trace_t0.csv");
  CHECK(trace.rfind("iter,primal_residual,dual_residual,eps_pri,eps_dual\n", 0) == 0);
  CHECK(static_cast<int>(std::count(trace.begin(), trace.end(), '\n')) == 1 + sol.iterations);

  SUBCASE("reruns are byte identical apart from timing") {
    const fs::path again = scratch("run2b");
    run_scenario(spec, again);
    for (const char* f : {"solution_t0.csv", "totals_t0.csv", "trace_t0.csv"}) {
      CHECK(slurp(dir / f) == slurp(again / f));
    }
    auto s1 = nlohmann::json::parse(slurp(dir / "summary.json"));
    auto s2 = nlohmann::json::parse(slurp(again / "summary.json"));
    for (auto* s : {&s1, &s2}) {
      s->erase("wall_seconds");
      for (auto& st : (*s)["steps"]) st.erase("wall_seconds");
    }
    CHECK(s1 == s2);
  }
}

TEST_CASE("oracle and ADMM agree on the same scenario") {
  const auto spec = load_scenario(scenario_path(2));
  RunOptions tight;
  auto tspec = spec;
  tspec.admm.eps_abs = 1e-7;
  tspec.admm.eps_rel = 1e-6;
  tspec.admm.max_iter = 200000;
  const auto admm = run_scenario(tspec, scratch("cmp_admm"));
  tight.method = Method::Oracle;
  const auto oracle = run_scenario(spec, scratch("cmp_oracle"), tight);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(admm.steps[0].solution.totals[i] - oracle.steps[0].solution.totals[i]) < 1e-2);
  }
  CHECK(oracle.steps[0].solution.iterations == 0);
}

TEST_CASE("a role flip at the second step matches the flipped scenario") {
  auto spec = load_scenario(scenario_path(2));
  spec.steps.resize(2);
  ProsumerOverride flip;
  flip.id = 2;
  flip.role = Role::Buyer;
  flip.p_tr_min = 0.01;
  flip.p_tr_max = 115;
  spec.steps[1].overrides.push_back(flip);
  const auto report = run_scenario(spec, scratch("flip"));
  REQUIRE(report.steps.size() == 2);
  const auto direct = run_scenario(load_scenario(scenario_path(4)), scratch("flip4"));
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(report.steps[1].solution.totals[i] == doctest::Approx(direct.steps[0].solution.totals[i]).epsilon(1e-9));
  }
  CHECK(std::abs(report.steps[1].solution.clusters.at(0).price - 4.58) < 0.03);
  CHECK(fs::exists(fs::temp_directory_path() / "p2p_test_flip" / "solution_t1.csv"));
}

TEST_CASE("decentralized method through the runner") {
  const fs::path dir = scratch("dec");
  RunOptions opt;
  opt.method = Method::Decentralized;
  opt.trace_messages = true;
  const auto report = run_scenario(load_scenario(scenario_path(2)), dir, opt);
  REQUIRE(report.steps[0].messages.has_value());
  CHECK(report.steps[0].messages->total > 0);
  const std::string msgs = slurp(dir / "messages_t0.csv");
  CHECK(msgs.rfind("round,from,to,kind,payload\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(msgs.begin(), msgs.end(), '\n')) == 1 + report.steps[0].messages->total);
}

TEST_CASE("learning scenario records its history") {
  const fs::path dir = scratch("learn");
  const auto report = run_scenario(load_scenario(scenario_path(6)), dir);
  REQUIRE(report.steps[0].learning.has_value());
  CHECK(fs::exists(dir / "learning_t0.csv"));
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  CHECK(summary.at("steps").at(0).contains("learning"));
  for (bool s : report.steps[0].solution.success) CHECK(s);
}

TEST_CASE("method names") {
  CHECK(method_from_string("oracle") == Method::Oracle);
  CHECK(method_from_string("decentralized") == Method::Decentralized);
  CHECK(to_string(Method::Admm) == "admm");
  CHECK(code_of([] { method_from_string("simplex"); }) == ErrorCode::ValidationError);
}
