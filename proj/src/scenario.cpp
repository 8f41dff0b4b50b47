#include "p2p/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "p2p/analytic_clearing.hpp"
#include "p2p/output.hpp"

namespace p2p {

using nlohmann::json;

std::string_view to_string(Method method) noexcept {
  switch (method) {
    case Method::Oracle:
      return "oracle";
    case Method::Admm:
      return "admm";
    case Method::Decentralized:
      return "decentralized";
  }
  return "?";
}

Method method_from_string(std::string_view text) {
  if (text == "oracle") return Method::Oracle;
  if (text == "admm") return Method::Admm;
  if (text == "decentralized") return Method::Decentralized;
  throw MarketError(ErrorCode::ValidationError, "unknown method '" + std::string(text) + "'");
}

namespace {

std::string_view to_string(LearningMode mode) {
  return mode == LearningMode::SuccessfulTrading ? "successful_trading" : "boost_volume";
}

[[noreturn]] void bad_field(const std::string& where, const std::string& what) {
  throw MarketError(ErrorCode::ValidationError, where + ": " + what);
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) bad_field(where, "expected an object");
  for (const auto& item : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; })) {
      bad_field(where, "unknown field '" + item.key() + "'");
    }
  }
}

const json& require(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) bad_field(where, std::string("missing field '") + key + "'");
  return *it;
}

double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) bad_field(where, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) bad_field(where, "expected a finite number");
  return x;
}

int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) bad_field(where, "expected an integer");
  return v.get<int>();
}

bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) bad_field(where, "expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) bad_field(where, "expected a string");
  return v.get<std::string>();
}

Role as_role(const json& v, const std::string& where) {
  try {
    return role_from_string(as_string(v, where));
  } catch (const MarketError& e) {
    bad_field(where, e.what());
  }
}

const json& as_array(const json& v, const std::string& where) {
  if (!v.is_array()) bad_field(where, "expected an array");
  return v;
}

std::vector<std::pair<int, int>> parse_edges(const json& v, const std::string& where) {
  std::vector<std::pair<int, int>> out;
  std::size_t k = 0;
  for (const json& e : as_array(v, where)) {
    const std::string at = where + "[" + std::to_string(k++) + "]";
    if (!e.is_array() || e.size() != 2) bad_field(at, "expected [i, j]");
    out.emplace_back(as_int(e[0], at + "[0]"), as_int(e[1], at + "[1]"));
  }
  return out;
}

json edges_to_json(const std::vector<std::pair<int, int>>& edges) {
  json out = json::array();
  for (const auto& [i, j] : edges) out.push_back({i, j});
  return out;
}

AdmmConfig parse_admm(const json& v) {
  const std::string where = "admm";
  check_keys(v, where, {"rho", "phi", "psi", "kappa", "mu1", "mu2", "eps_abs", "eps_rel", "max_iter", "workers"});
  AdmmConfig c;
  const auto num = [&](const char* key, double& dst) {
    if (v.contains(key)) dst = as_number(v.at(key), where + "." + key);
  };
  num("rho", c.rho);
  num("phi", c.phi);
  num("psi", c.psi);
  num("kappa", c.kappa);
  num("mu1", c.mu1);
  num("mu2", c.mu2);
  num("eps_abs", c.eps_abs);
  num("eps_rel", c.eps_rel);
  if (v.contains("max_iter")) c.max_iter = as_int(v.at("max_iter"), where + ".max_iter");
  if (v.contains("workers")) c.workers = as_int(v.at("workers"), where + ".workers");
  return c;
}

json admm_to_json(const AdmmConfig& c) {
  return {{"rho", c.rho},         {"phi", c.phi},         {"psi", c.psi},           {"kappa", c.kappa},
          {"mu1", c.mu1},         {"mu2", c.mu2},         {"eps_abs", c.eps_abs},   {"eps_rel", c.eps_rel},
          {"max_iter", c.max_iter}, {"workers", c.workers}};
}

LearningSpec parse_learning(const json& v) {
  const std::string where = "learning";
  check_keys(v, where,
             {"mode", "delta_b", "gamma", "max_rounds", "success_threshold", "participants", "inner_uses_method"});
  LearningSpec s;
  if (v.contains("mode")) {
    const auto mode = as_string(v.at("mode"), where + ".mode");
    if (mode == "successful_trading") {
      s.mode = LearningMode::SuccessfulTrading;
    } else if (mode == "boost_volume") {
      s.mode = LearningMode::BoostVolume;
    } else {
      bad_field(where + ".mode", "unknown mode '" + mode + "'");
    }
  }
  if (v.contains("delta_b")) s.policy.delta_b = as_number(v.at("delta_b"), where + ".delta_b");
  if (v.contains("gamma")) s.policy.gamma = as_number(v.at("gamma"), where + ".gamma");
  if (v.contains("max_rounds")) s.policy.max_rounds = as_int(v.at("max_rounds"), where + ".max_rounds");
  if (v.contains("success_threshold")) {
    s.policy.success_threshold = as_number(v.at("success_threshold"), where + ".success_threshold");
  }
  if (v.contains("participants")) {
    std::size_t k = 0;
    for (const json& id : as_array(v.at("participants"), where + ".participants")) {
      s.participants.insert(as_int(id, where + ".participants[" + std::to_string(k++) + "]"));
    }
  }
  if (v.contains("inner_uses_method")) {
    s.inner_uses_method = as_bool(v.at("inner_uses_method"), where + ".inner_uses_method");
  }
  return s;
}

json learning_to_json(const LearningSpec& s) {
  return {{"mode", to_string(s.mode)},
          {"delta_b", s.policy.delta_b},
          {"gamma", s.policy.gamma},
          {"max_rounds", s.policy.max_rounds},
          {"success_threshold", s.policy.success_threshold},
          {"participants", s.participants},
          {"inner_uses_method", s.inner_uses_method}};
}

StepSpec parse_step(const json& v, const std::string& where) {
  check_keys(v, where, {"overrides", "edges", "complete_bipartite", "ramps"});
  StepSpec s;
  if (v.contains("overrides")) {
    std::size_t k = 0;
    for (const json& o : as_array(v.at("overrides"), where + ".overrides")) {
      const std::string at = where + ".overrides[" + std::to_string(k++) + "]";
      check_keys(o, at, {"id", "role", "a", "b", "p_tr_min", "p_tr_max"});
      ProsumerOverride po;
      po.id = as_int(require(o, "id", at), at + ".id");
      if (o.contains("role")) po.role = as_role(o.at("role"), at + ".role");
      if (o.contains("a")) po.a = as_number(o.at("a"), at + ".a");
      if (o.contains("b")) po.b = as_number(o.at("b"), at + ".b");
      if (o.contains("p_tr_min")) po.p_tr_min = as_number(o.at("p_tr_min"), at + ".p_tr_min");
      if (o.contains("p_tr_max")) po.p_tr_max = as_number(o.at("p_tr_max"), at + ".p_tr_max");
      s.overrides.push_back(po);
    }
  }
  if (v.contains("edges")) s.edges = parse_edges(v.at("edges"), where + ".edges");
  if (v.contains("complete_bipartite")) {
    s.complete_bipartite = as_bool(v.at("complete_bipartite"), where + ".complete_bipartite");
  }
  if (v.contains("ramps")) {
    std::size_t k = 0;
    for (const json& r : as_array(v.at("ramps"), where + ".ramps")) {
      const std::string at = where + ".ramps[" + std::to_string(k++) + "]";
      check_keys(r, at, {"id", "ramp_min", "ramp_max"});
      RampLimit rl;
      rl.id = as_int(require(r, "id", at), at + ".id");
      if (r.contains("ramp_min") && !r.at("ramp_min").is_null()) rl.ramp_min = as_number(r.at("ramp_min"), at + ".ramp_min");
      if (r.contains("ramp_max") && !r.at("ramp_max").is_null()) rl.ramp_max = as_number(r.at("ramp_max"), at + ".ramp_max");
      s.ramps.push_back(rl);
    }
  }
  return s;
}

json step_to_json(const StepSpec& s) {
  json out = json::object();
  json overrides = json::array();
  for (const ProsumerOverride& o : s.overrides) {
    json row = {{"id", o.id}};
    if (o.role) row["role"] = to_string(*o.role);
    if (o.a) row["a"] = *o.a;
    if (o.b) row["b"] = *o.b;
    if (o.p_tr_min) row["p_tr_min"] = *o.p_tr_min;
    if (o.p_tr_max) row["p_tr_max"] = *o.p_tr_max;
    overrides.push_back(std::move(row));
  }
  out["overrides"] = std::move(overrides);
  if (s.edges) out["edges"] = edges_to_json(*s.edges);
  if (s.complete_bipartite) out["complete_bipartite"] = *s.complete_bipartite;
  if (!s.ramps.empty()) {
    json ramps = json::array();
    for (const RampLimit& r : s.ramps) {
      json row = {{"id", r.id}};
      if (std::isfinite(r.ramp_min)) row["ramp_min"] = r.ramp_min;
      if (std::isfinite(r.ramp_max)) row["ramp_max"] = r.ramp_max;
      ramps.push_back(std::move(row));
    }
    out["ramps"] = std::move(ramps);
  }
  return out;
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

}  // namespace

ScenarioSpec scenario_from_json(const json& doc) {
  check_keys(doc, "scenario",
             {"name", "prosumers", "complete_bipartite", "edges", "weights", "admm", "method", "learning", "steps",
              "seed", "metadata"});
  ScenarioSpec spec;
  spec.name = as_string(require(doc, "name", "scenario"), "name");
  std::size_t k = 0;
  for (const json& p : as_array(require(doc, "prosumers", "scenario"), "prosumers")) {
    const std::string at = "prosumers[" + std::to_string(k++) + "]";
    check_keys(p, at, {"id", "role", "a", "b", "p_tr_min", "p_tr_max"});
    ProsumerSpec ps;
    ps.id = as_int(require(p, "id", at), at + ".id");
    ps.role = as_role(require(p, "role", at), at + ".role");
    ps.a = as_number(require(p, "a", at), at + ".a");
    ps.b = as_number(require(p, "b", at), at + ".b");
    ps.p_tr_min = as_number(require(p, "p_tr_min", at), at + ".p_tr_min");
    ps.p_tr_max = as_number(require(p, "p_tr_max", at), at + ".p_tr_max");
    spec.prosumers.push_back(ps);
  }
  if (doc.contains("complete_bipartite")) {
    spec.complete_bipartite = as_bool(doc.at("complete_bipartite"), "complete_bipartite");
  }
  if (doc.contains("edges")) spec.edges = parse_edges(doc.at("edges"), "edges");
  if (doc.contains("weights")) {
    k = 0;
    for (const json& w : as_array(doc.at("weights"), "weights")) {
      const std::string at = "weights[" + std::to_string(k++) + "]";
      check_keys(w, at, {"from", "to", "d"});
      const int from = as_int(require(w, "from", at), at + ".from");
      const int to = as_int(require(w, "to", at), at + ".to");
      if (!spec.weights.emplace(std::pair{from, to}, as_number(require(w, "d", at), at + ".d")).second) {
        bad_field(at, "duplicate weight");
      }
    }
  }
  if (doc.contains("admm")) spec.admm = parse_admm(doc.at("admm"));
  if (doc.contains("method")) {
    try {
      spec.method = method_from_string(as_string(doc.at("method"), "method"));
    } catch (const MarketError& e) {
      bad_field("method", e.what());
    }
  }
  if (doc.contains("learning") && !doc.at("learning").is_null()) spec.learning = parse_learning(doc.at("learning"));
  if (doc.contains("steps")) {
    k = 0;
    for (const json& s : as_array(doc.at("steps"), "steps")) {
      spec.steps.push_back(parse_step(s, "steps[" + std::to_string(k++) + "]"));
    }
  }
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) bad_field("seed", "expected a nonnegative integer");
    spec.seed = doc.at("seed").get<std::uint64_t>();
  }
  if (doc.contains("metadata")) {
    if (!doc.at("metadata").is_object()) bad_field("metadata", "expected an object");
    spec.metadata = doc.at("metadata");
  }
  validate_scenario(spec);
  return spec;
}

json scenario_to_json(const ScenarioSpec& spec) {
  json doc = json::object();
  doc["name"] = spec.name;
  json prosumers = json::array();
  for (const ProsumerSpec& p : spec.prosumers) {
    prosumers.push_back({{"id", p.id},
                         {"role", to_string(p.role)},
                         {"a", p.a},
                         {"b", p.b},
                         {"p_tr_min", p.p_tr_min},
                         {"p_tr_max", p.p_tr_max}});
  }
  doc["prosumers"] = std::move(prosumers);
  doc["complete_bipartite"] = spec.complete_bipartite;
  doc["edges"] = edges_to_json(spec.edges);
  json weights = json::array();
  for (const auto& [key, d] : spec.weights) weights.push_back({{"from", key.first}, {"to", key.second}, {"d", d}});
  doc["weights"] = std::move(weights);
  doc["admm"] = admm_to_json(spec.admm);
  doc["method"] = to_string(spec.method);
  if (spec.learning) doc["learning"] = learning_to_json(*spec.learning);
  if (!spec.steps.empty()) {
    json steps = json::array();
    for (const StepSpec& s : spec.steps) steps.push_back(step_to_json(s));
    doc["steps"] = std::move(steps);
  }
  doc["seed"] = spec.seed;
  doc["metadata"] = spec.metadata;
  return doc;
}

ScenarioSpec load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MarketError(ErrorCode::ParseError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw MarketError(ErrorCode::ParseError,
                      path.string() + ":" + std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  try {
    return scenario_from_json(doc);
  } catch (const MarketError& e) {
    throw MarketError(e.code(), path.string() + ": " + e.what());
  }
}

void write_scenario(const ScenarioSpec& spec, const std::filesystem::path& path) {
  write_text_file(path, scenario_to_json(spec).dump(2) + "\n");
}

std::pair<double, double> merge_ramp_bounds(double p_tr_min, double p_tr_max, double previous_total, double ramp_min,
                                            double ramp_max) {
  if (ramp_min > ramp_max) throw MarketError(ErrorCode::RangeError, "ramp_min exceeds ramp_max");
  const double lo = std::max(p_tr_min, ramp_min + previous_total);
  const double hi = std::min(p_tr_max, ramp_max + previous_total);
  if (lo > hi) {
    std::ostringstream msg;
    msg << "ramp interval [" << lo << ", " << hi << "] is empty";
    throw MarketError(ErrorCode::EmptyFeasibleInterval, msg.str());
  }
  return {lo, hi};
}

Market build_step_market(const ScenarioSpec& spec, std::size_t t, const std::vector<double>* previous_totals) {
  if (spec.prosumers.empty()) throw MarketError(ErrorCode::ValidationError, "scenario has no prosumers");
  if (t >= spec.num_steps()) throw MarketError(ErrorCode::ValidationError, "step index out of range");
  std::map<int, ProsumerSpec> rows;
  for (const ProsumerSpec& p : spec.prosumers) {
    if (!rows.emplace(p.id, p).second) {
      throw MarketError(ErrorCode::DuplicateId, "duplicate prosumer id " + std::to_string(p.id));
    }
  }
  const StepSpec* step = spec.steps.empty() ? nullptr : &spec.steps[t];
  if (step) {
    for (const ProsumerOverride& o : step->overrides) {
      const auto it = rows.find(o.id);
      if (it == rows.end()) {
        throw MarketError(ErrorCode::ValidationError, "override for unknown prosumer " + std::to_string(o.id));
      }
      ProsumerSpec& p = it->second;
      if (o.role) p.role = *o.role;
      if (o.a) p.a = *o.a;
      if (o.b) p.b = *o.b;
      if (o.p_tr_min) p.p_tr_min = *o.p_tr_min;
      if (o.p_tr_max) p.p_tr_max = *o.p_tr_max;
    }
  }
  std::vector<Prosumer> prosumers;
  for (const auto& [id, p] : rows) prosumers.push_back(make_prosumer(id, p.role, p.a, p.b, p.p_tr_min, p.p_tr_max));

  if (step && !step->ramps.empty() && previous_totals) {
    if (previous_totals->size() != prosumers.size()) {
      throw MarketError(ErrorCode::ValidationError, "previous totals do not match the prosumer count");
    }
    for (const RampLimit& r : step->ramps) {
      const auto it = std::find_if(prosumers.begin(), prosumers.end(), [&](const Prosumer& p) { return p.id == r.id; });
      if (it == prosumers.end()) {
        throw MarketError(ErrorCode::ValidationError, "ramp for unknown prosumer " + std::to_string(r.id));
      }
      const double prev = (*previous_totals)[static_cast<std::size_t>(it - prosumers.begin())];
      const auto [lo, hi] = merge_ramp_bounds(it->p_tr_min, it->p_tr_max, prev, r.ramp_min, r.ramp_max);
      it->p_tr_min = lo;
      it->p_tr_max = hi;
      validate_prosumer(*it);
    }
  }

  const bool complete = step && step->complete_bipartite ? *step->complete_bipartite
                                                         : (step && step->edges ? false : spec.complete_bipartite);
  std::vector<std::pair<int, int>> edges;
  if (complete) {
    edges = complete_bipartite_edges(prosumers);
  } else if (step && step->edges) {
    edges = *step->edges;
  } else {
    edges = spec.edges;
  }
  return Market(std::move(prosumers), edges, spec.weights);
}

void validate_scenario(const ScenarioSpec& spec) {
  if (spec.name.empty()) throw MarketError(ErrorCode::ValidationError, "name: must not be empty");
  if (spec.prosumers.empty()) throw MarketError(ErrorCode::ValidationError, "prosumers: list is empty");
  try {
    spec.admm.validate();
    if (spec.learning) spec.learning->policy.validate();
  } catch (const MarketError& e) {
    throw MarketError(ErrorCode::ValidationError, std::string(to_string(e.code())) + ": " + e.what());
  }
  for (std::size_t t = 0; t < spec.num_steps(); ++t) {
    try {
      (void)build_step_market(spec, t);
    } catch (const MarketError& e) {
      throw MarketError(ErrorCode::ValidationError,
                        "step " + std::to_string(t) + ": " + std::string(to_string(e.code())) + ": " + e.what());
    }
  }
  if (spec.learning) {
    for (int id : spec.learning->participants) {
      if (std::none_of(spec.prosumers.begin(), spec.prosumers.end(), [id](const ProsumerSpec& p) { return p.id == id; })) {
        throw MarketError(ErrorCode::ValidationError, "learning.participants: unknown prosumer " + std::to_string(id));
      }
    }
  }
}

FeederSpec feeder_of_size(int nodes, std::uint64_t seed) {
  FeederSpec f;
  f.nodes = nodes;
  f.seed = seed;
  if (nodes == 55) {
    f.solar_nodes = 25;
  } else if (nodes == 165) {
    f.solar_nodes = 75;
  } else if (nodes == 330) {
    f.solar_nodes = 150;
  } else {
    f.solar_nodes = static_cast<int>(std::lround(nodes * 25.0 / 55.0));
  }
  return f;
}

ScenarioSpec generate_feeder(const FeederSpec& f) {
  if (f.nodes < 2 || f.solar_nodes < 1 || f.solar_nodes >= f.nodes) {
    throw MarketError(ErrorCode::RangeError, "feeder needs at least one solar and one non-solar node");
  }
  if (!(f.a_min > 0.0) || f.a_min > f.a_max || f.b_min > f.b_max || !(f.solar_peak_kw > 0.0) ||
      !(f.solar_node_max_demand_kw > 0.0) || f.solar_node_max_demand_kw >= 0.9 * f.solar_peak_kw || f.steps < 1) {
    throw MarketError(ErrorCode::RangeError, "feeder ranges are invalid");
  }
  std::mt19937_64 rng(f.seed);
  const auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const auto n = static_cast<std::size_t>(f.nodes);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> solar(n, false);
  for (int k = 0; k < f.solar_nodes; ++k) solar[order[static_cast<std::size_t>(k)]] = true;

  const int noon = std::min(12, f.steps - 1);
  std::vector<std::vector<double>> gen(n, std::vector<double>(static_cast<std::size_t>(f.steps), 0.0));
  std::vector<std::vector<double>> demand = gen;
  std::vector<double> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = uniform(f.a_min, f.a_max);
    b[i] = uniform(f.b_min, f.b_max);
    const double base = uniform(0.3, 0.8);
    const double morning = uniform(0.2, 1.0);
    const double evening = uniform(0.5, 2.0);
    const double clear_sky = uniform(0.9, 1.0);
    for (int t = 0; t < f.steps; ++t) {
      const double h = static_cast<double>(t);
      double d = base + morning * std::exp(-std::pow((h - 8.0) / 1.5, 2)) + evening * std::exp(-std::pow((h - 19.0) / 2.0, 2));
      if (solar[i]) d = std::min(d, f.solar_node_max_demand_kw);
      demand[i][static_cast<std::size_t>(t)] = d;
      if (solar[i]) {
        const double shape = std::sin(std::numbers::pi * (h - (noon - 6.0)) / 12.0);
        gen[i][static_cast<std::size_t>(t)] = h > noon - 6.0 && h < noon + 6.0 ? f.solar_peak_kw * clear_sky * shape : 0.0;
      }
    }
  }

  const auto row_for = [&](std::size_t i, int t) {
    const double net = gen[i][static_cast<std::size_t>(t)] - demand[i][static_cast<std::size_t>(t)];
    ProsumerOverride o;
    o.id = static_cast<int>(i) + 1;
    if (net > 0.0) {
      o.role = Role::Seller;
      o.p_tr_min = -net;
      o.p_tr_max = 0.0;
    } else {
      o.role = Role::Buyer;
      o.p_tr_min = 0.0;
      o.p_tr_max = -net;
    }
    return o;
  };

  ScenarioSpec spec;
  spec.name = "feeder_" + std::to_string(f.nodes);
  spec.complete_bipartite = true;
  spec.method = Method::Admm;
  // Net-position bounds are a few kW against responses of ~70 kW per
  // currency unit, so nearly every bound is active; a larger penalty lets the
  // scaled duals reach the bound multipliers in hundreds of iterations.
  spec.admm.rho = 0.5;
  spec.admm.phi = 0.525;
  spec.admm.psi = 0.525;
  spec.seed = f.seed;
  for (std::size_t i = 0; i < n; ++i) {
    const ProsumerOverride o = row_for(i, noon);
    spec.prosumers.push_back({o.id, *o.role, a[i], b[i], *o.p_tr_min, *o.p_tr_max});
  }
  for (int t = 0; t < f.steps; ++t) {
    StepSpec step;
    for (std::size_t i = 0; i < n; ++i) step.overrides.push_back(row_for(i, t));
    spec.steps.push_back(std::move(step));
  }
  json solar_ids = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    if (solar[i]) solar_ids.push_back(static_cast<int>(i) + 1);
  }
  spec.metadata = {{"generator", "feeder"},
                   {"nodes", f.nodes},
                   {"solar_nodes", solar_ids},
                   {"noon_step", noon},
                   {"step_hours", 1},
                   {"profiles", "synthetic stand-in series"},
                   {"generation_kw", gen},
                   {"demand_kw", demand}};
  return spec;
}

ClearOutcome clear_market(const Market& market, Method method, const AdmmConfig& config, const ClearOptions& options) {
  ClearOutcome out;
  switch (method) {
    case Method::Oracle:
      out.solution = oracle_clear(market);
      break;
    case Method::Admm:
      out.solution = run(market, config).solution;
      break;
    case Method::Decentralized: {
      auto r = run_decentralized(market, config, options.decentralized);
      out.solution = std::move(r.solution);
      out.messages = std::move(r.stats);
      out.message_trace = std::move(r.message_trace);
      break;
    }
  }
  return out;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string render(const auto& writer) {
  std::ostringstream out;
  writer(out);
  return out.str();
}

json clusters_json(const MarketSolution& sol) {
  json out = json::array();
  for (const Cluster& c : sol.clusters) {
    out.push_back({{"members", c.members}, {"price", c.price}, {"price_spread", c.price_spread}});
  }
  return out;
}

}  // namespace

RunReport run_scenario(const ScenarioSpec& spec, const std::filesystem::path& outdir, const RunOptions& options) {
  validate_scenario(spec);
  const Method method = options.method.value_or(spec.method);
  AdmmConfig config = spec.admm;
  if (options.max_iter) config.max_iter = *options.max_iter;
  config.validate();
  ClearOptions copts;
  copts.decentralized.trace_messages = options.trace_messages;
  std::filesystem::create_directories(outdir);

  const auto started = std::chrono::steady_clock::now();
  RunReport report;
  json steps = json::array();
  std::vector<double> previous;
  for (std::size_t t = 0; t < spec.num_steps(); ++t) {
    const auto step_start = std::chrono::steady_clock::now();
    Market market = build_step_market(spec, t, t > 0 ? &previous : nullptr);
    StepReport sr;
    sr.step = t;
    std::vector<Message> msg_trace;
    const auto clear_with = [&](Method m) {
      return [&, m](const Market& mk) {
        auto o = clear_market(mk, m, config, copts);
        if (o.messages) sr.messages = o.messages;
        if (!o.message_trace.empty()) msg_trace = std::move(o.message_trace);
        return o.solution;
      };
    };
    if (spec.learning && spec.learning->mode == LearningMode::SuccessfulTrading) {
      const Method inner = spec.learning->inner_uses_method ? method : Method::Oracle;
      const ClearFn confirm = inner == method ? ClearFn{} : ClearFn{clear_with(method)};
      LearningResult lr = learn_successful_trading(market, spec.learning->policy, clear_with(inner), confirm,
                                                   spec.learning->participants);
      market = lr.market;
      sr.solution = lr.confirmation ? *lr.confirmation : lr.solution;
      sr.learning = std::move(lr);
    } else if (spec.learning) {
      BoostResult br = learn_boost_volume(market, spec.learning->policy, clear_with(method), spec.learning->participants);
      market = br.market;
      sr.solution = br.after;
    } else {
      sr.solution = clear_with(method)(market);
    }
    sr.wall_seconds = seconds_since(step_start);
    if (sr.solution.status == SolveStatus::MaxIterExceeded) report.all_converged = false;

    const std::string suffix = "_t" + std::to_string(t) + ".csv";
    write_text_file(outdir / ("solution" + suffix), render([&](std::ostream& o) { write_solution_csv(o, market, sr.solution); }));
    write_text_file(outdir / ("totals" + suffix), render([&](std::ostream& o) { write_totals_csv(o, market, sr.solution); }));
    write_text_file(outdir / ("trace" + suffix), render([&](std::ostream& o) { write_trace_csv(o, sr.solution.trace); }));
    if (options.trace_messages && method == Method::Decentralized) {
      write_text_file(outdir / ("messages" + suffix), render([&](std::ostream& o) { write_message_trace(o, msg_trace); }));
    }
    if (sr.learning) {
      write_text_file(outdir / ("learning" + suffix),
                      render([&](std::ostream& o) { write_learning_history(o, market, sr.learning->history); }));
    }

    json totals = json::object();
    for (std::size_t i = 0; i < market.size(); ++i) totals[std::to_string(market.prosumer(i).id)] = sr.solution.totals[i];
    json step = {{"step", t},
                 {"status", to_string(sr.solution.status)},
                 {"iterations", sr.solution.iterations},
                 {"clusters", clusters_json(sr.solution)},
                 {"non_traders", sr.solution.non_traders},
                 {"totals", totals},
                 {"wall_seconds", sr.wall_seconds}};
    if (sr.learning) {
      json b = json::object();
      for (const Prosumer& p : market.prosumers()) b[std::to_string(p.id)] = p.b;
      step["learning"] = {{"rounds", sr.learning->rounds}, {"converged", sr.learning->converged}, {"b", b}};
    }
    if (sr.messages) step["messages"] = sr.messages->total;
    steps.push_back(std::move(step));

    previous = sr.solution.totals;
    report.steps.push_back(std::move(sr));
  }
  report.wall_seconds = seconds_since(started);
  json summary = {{"name", spec.name},
                  {"method", to_string(method)},
                  {"seed", spec.seed},
                  {"all_converged", report.all_converged},
                  {"steps", std::move(steps)},
                  {"wall_seconds", report.wall_seconds}};
  write_text_file(outdir / "summary.json", summary.dump(2) + "\n");
  return report;
}

std::vector<SweepRow> run_sweep(const std::vector<int>& sizes, std::uint64_t seed, std::optional<int> max_iter) {
  std::vector<SweepRow> rows;
  for (int nodes : sizes) {
    const ScenarioSpec spec = generate_feeder(feeder_of_size(nodes, seed));
    const auto noon = spec.metadata.at("noon_step").get<std::size_t>();
    const Market market = build_step_market(spec, noon);
    SweepRow row;
    row.nodes = nodes;
    for (const Prosumer& p : market.prosumers()) (p.role == Role::Seller ? row.sellers : row.buyers) += 1;
    row.edges = market.graph().num_edges();
    const auto start = std::chrono::steady_clock::now();
    AdmmConfig config = spec.admm;
    if (max_iter) config.max_iter = *max_iter;
    const auto result = run(market, config);
    row.wall_seconds = seconds_since(start);
    row.iterations = result.solution.iterations;
    row.status = result.solution.status;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace p2p
