#include "p2p/market_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace p2p {

std::string_view to_string(Role role) noexcept { return role == Role::Buyer ? "buyer" : "seller"; }

Role role_from_string(std::string_view text) {
  if (text == "buyer") return Role::Buyer;
  if (text == "seller") return Role::Seller;
  throw MarketError(ErrorCode::ParseError, "unknown role '" + std::string(text) + "'");
}

void validate_prosumer(const Prosumer& p) {
  const auto fail = [&](const std::string& why) {
    throw MarketError(ErrorCode::InvalidProsumer, "prosumer " + std::to_string(p.id) + ": " + why);
  };
  if (!std::isfinite(p.a) || !std::isfinite(p.b) || std::isnan(p.p_tr_min) || std::isnan(p.p_tr_max)) {
    fail("non-finite parameter");
  }
  if (!(p.a > 0.0)) fail("a must be positive");
  if (p.p_tr_min > p.p_tr_max) fail("p_tr_min exceeds p_tr_max");
  if (p.role == Role::Seller && p.p_tr_max > 0.0) fail("seller with positive upper bound");
  if (p.role == Role::Buyer && p.p_tr_min < 0.0) fail("buyer with negative lower bound");
}

Prosumer make_prosumer(int id, Role role, double a, double b, double p_tr_min, double p_tr_max) {
  Prosumer p{id, role, a, b, p_tr_min, p_tr_max};
  if (role == Role::Seller) {
    if (p_tr_max > 0.0 || p_tr_min > 0.0) {
      throw MarketError(ErrorCode::InvalidProsumer, "seller " + std::to_string(id) + " has positive bounds");
    }
    p.p_tr_max = 0.0;
  } else {
    if (p_tr_min < 0.0 || p_tr_max < 0.0) {
      throw MarketError(ErrorCode::InvalidProsumer, "buyer " + std::to_string(id) + " has negative bounds");
    }
    p.p_tr_min = 0.0;
  }
  validate_prosumer(p);
  return p;
}

std::optional<std::size_t> TradingGraph::index_of(int id) const {
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

std::optional<std::size_t> TradingGraph::pair_slot(std::size_t i, std::size_t j) const {
  if (i >= size()) return std::nullopt;
  const auto first = neighbor_.begin() + static_cast<std::ptrdiff_t>(row_offset_[i]);
  const auto last = neighbor_.begin() + static_cast<std::ptrdiff_t>(row_offset_[i + 1]);
  const auto it = std::lower_bound(first, last, j);
  if (it == last || *it != j) return std::nullopt;
  return static_cast<std::size_t>(it - neighbor_.begin());
}

bool TradingGraph::has_weights() const noexcept {
  return std::any_of(weights_.begin(), weights_.end(), [](double d) { return d != 0.0; });
}

TradingGraph build_graph(std::span<const Prosumer> prosumers, std::span<const std::pair<int, int>> edge_list,
                         const WeightMap& weights) {
  TradingGraph g;
  std::vector<const Prosumer*> sorted;
  sorted.reserve(prosumers.size());
  for (const auto& p : prosumers) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](const Prosumer* x, const Prosumer* y) { return x->id < y->id; });
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (k > 0 && sorted[k]->id == sorted[k - 1]->id) {
      throw MarketError(ErrorCode::DuplicateId, "prosumer id " + std::to_string(sorted[k]->id) + " repeated");
    }
    g.ids_.push_back(sorted[k]->id);
    g.roles_.push_back(sorted[k]->role);
  }

  const std::size_t n = g.ids_.size();
  std::set<std::pair<std::size_t, std::size_t>> edge_set;
  for (const auto& [u, v] : edge_list) {
    const auto iu = g.index_of(u);
    const auto iv = g.index_of(v);
    if (!iu || !iv) {
      throw MarketError(ErrorCode::DanglingEdge,
                        "edge {" + std::to_string(u) + ", " + std::to_string(v) + "} references unknown prosumer");
    }
    if (g.roles_[*iu] == g.roles_[*iv]) {
      throw MarketError(ErrorCode::NonBipartiteEdge,
                        "edge {" + std::to_string(u) + ", " + std::to_string(v) + "} joins two " +
                            std::string(to_string(g.roles_[*iu])) + "s");
    }
    edge_set.emplace(std::min(*iu, *iv), std::max(*iu, *iv));
  }
  g.edges_.assign(edge_set.begin(), edge_set.end());

  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [u, v] : g.edges_) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  g.row_offset_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::sort(adj[i].begin(), adj[i].end());
    g.row_offset_[i + 1] = g.row_offset_[i] + adj[i].size();
    for (std::size_t j : adj[i]) {
      g.neighbor_.push_back(j);
      g.pair_from_.push_back(i);
    }
  }
  const std::size_t m = g.neighbor_.size();
  g.reverse_.resize(m);
  for (std::size_t k = 0; k < m; ++k) g.reverse_[k] = *g.pair_slot(g.neighbor_[k], g.pair_from_[k]);

  g.weights_.assign(m, 0.0);
  for (const auto& [key, d] : weights) {
    const auto ii = g.index_of(key.first);
    const auto jj = g.index_of(key.second);
    const auto slot = (ii && jj) ? g.pair_slot(*ii, *jj) : std::nullopt;
    if (!slot) {
      throw MarketError(ErrorCode::WeightOnNonEdge, "weight on (" + std::to_string(key.first) + ", " +
                                                        std::to_string(key.second) + ") which is not an edge");
    }
    if (!std::isfinite(d)) throw MarketError(ErrorCode::NonFiniteInput, "non-finite trade weight");
    g.weights_[*slot] = d;
  }
  return g;
}

std::vector<std::pair<int, int>> complete_bipartite_edges(std::span<const Prosumer> prosumers) {
  std::vector<std::pair<int, int>> out;
  for (const auto& p : prosumers) {
    if (p.role != Role::Buyer) continue;
    for (const auto& q : prosumers) {
      if (q.role == Role::Seller) out.emplace_back(p.id, q.id);
    }
  }
  return out;
}

double PairVector::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

double PairVector::max_abs() const {
  double s = 0.0;
  for (double v : values_) s = std::max(s, std::abs(v));
  return s;
}

Market::Market(std::vector<Prosumer> prosumers, std::span<const std::pair<int, int>> edge_list,
               const WeightMap& weights)
    : prosumers_(std::move(prosumers)) {
  for (const auto& p : prosumers_) validate_prosumer(p);
  graph_ = build_graph(prosumers_, edge_list, weights);
  std::sort(prosumers_.begin(), prosumers_.end(), [](const Prosumer& x, const Prosumer& y) { return x.id < y.id; });
}

std::vector<std::pair<int, int>> Market::edge_list() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(graph_.num_edges());
  for (const auto& [u, v] : graph_.edges()) out.emplace_back(graph_.id(u), graph_.id(v));
  return out;
}

WeightMap Market::weight_map() const {
  WeightMap out;
  const auto w = graph_.weights();
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] != 0.0) out[{graph_.id(graph_.pair_from(k)), graph_.id(graph_.pair_to(k))}] = w[k];
  }
  return out;
}

Market Market::with_prosumers(std::vector<Prosumer> prosumers) const {
  std::sort(prosumers.begin(), prosumers.end(), [](const Prosumer& x, const Prosumer& y) { return x.id < y.id; });
  if (prosumers.size() != prosumers_.size()) {
    throw MarketError(ErrorCode::ValidationError, "prosumer count changed");
  }
  for (std::size_t i = 0; i < prosumers.size(); ++i) {
    if (prosumers[i].id != prosumers_[i].id || prosumers[i].role != prosumers_[i].role) {
      throw MarketError(ErrorCode::ValidationError, "ids and roles must be preserved");
    }
    validate_prosumer(prosumers[i]);
  }
  Market copy = *this;
  copy.prosumers_ = std::move(prosumers);
  return copy;
}

GraphAlgebra graph_algebra(const TradingGraph& graph) {
  const auto n = static_cast<Eigen::Index>(graph.size());
  const auto e = static_cast<Eigen::Index>(graph.num_edges());
  GraphAlgebra out;
  out.adjacency = Eigen::MatrixXi::Zero(n, n);
  out.degree = Eigen::MatrixXi::Zero(n, n);
  out.incidence = Eigen::MatrixXi::Zero(n, e);
  Eigen::Index k = 0;
  for (const auto& [u, v] : graph.edges()) {
    const auto iu = static_cast<Eigen::Index>(u);
    const auto iv = static_cast<Eigen::Index>(v);
    out.adjacency(iu, iv) = 1;
    out.adjacency(iv, iu) = 1;
    // u < v in index order, which is id order
    out.incidence(iu, k) = 1;
    out.incidence(iv, k) = -1;
    ++k;
  }
  for (Eigen::Index i = 0; i < n; ++i) out.degree(i, i) = static_cast<int>(graph.degree(static_cast<std::size_t>(i)));
  out.laplacian = out.degree - out.adjacency;
  return out;
}

double cost(const Prosumer& prosumer, const std::map<int, double>& trades, const TradingGraph& graph) {
  const auto idx = graph.index_of(prosumer.id);
  if (!idx) throw MarketError(ErrorCode::DanglingEdge, "prosumer not in graph");
  const auto nb = graph.neighbors(*idx);
  if (trades.size() != nb.size()) {
    throw MarketError(ErrorCode::MissingPair, "trade list does not match neighbour set of prosumer " +
                                                  std::to_string(prosumer.id));
  }
  double total = 0.0;
  double bilateral = 0.0;
  for (std::size_t j : nb) {
    const auto it = trades.find(graph.id(j));
    if (it == trades.end()) {
      throw MarketError(ErrorCode::MissingPair, "no trade for pair (" + std::to_string(prosumer.id) + ", " +
                                                    std::to_string(graph.id(j)) + ")");
    }
    total += it->second;
    bilateral += graph.weights()[*graph.pair_slot(*idx, j)] * it->second;
  }
  return prosumer.a * total * total + prosumer.b * total + bilateral;
}

double cost(const Market& market, std::size_t i, const PairVector& trades) {
  const auto& g = market.graph();
  if (trades.size() != g.num_pairs()) throw MarketError(ErrorCode::MissingPair, "pair vector has wrong length");
  const auto& p = market.prosumer(i);
  double total = 0.0;
  double bilateral = 0.0;
  for (std::size_t k = g.row_begin(i); k < g.row_end(i); ++k) {
    total += trades[k];
    bilateral += g.weights()[k] * trades[k];
  }
  return p.a * total * total + p.b * total + bilateral;
}

std::vector<double> totals(const TradingGraph& graph, const PairVector& trades) {
  std::vector<double> out(graph.size(), 0.0);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (std::size_t k = graph.row_begin(i); k < graph.row_end(i); ++k) out[i] += trades[k];
  }
  return out;
}

Components connected_components(const TradingGraph& graph, std::span<const std::pair<int, int>> active_edges) {
  const std::size_t n = graph.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<bool> touched(n, false);
  for (const auto& [u, v] : active_edges) {
    const auto iu = graph.index_of(u);
    const auto iv = graph.index_of(v);
    if (!iu || !iv || !graph.adjacent(*iu, *iv)) {
      throw MarketError(ErrorCode::DanglingEdge,
                        "active edge {" + std::to_string(u) + ", " + std::to_string(v) + "} is not in the graph");
    }
    touched[*iu] = touched[*iv] = true;
    const auto ru = find(*iu);
    const auto rv = find(*iv);
    if (ru != rv) parent[std::max(ru, rv)] = std::min(ru, rv);
  }
  Components out;
  std::vector<std::ptrdiff_t> slot(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!touched[i]) {
      out.non_traders.push_back(graph.id(i));
      continue;
    }
    const auto r = find(i);
    if (slot[r] < 0) {
      slot[r] = static_cast<std::ptrdiff_t>(out.components.size());
      out.components.emplace_back();
    }
    out.components[static_cast<std::size_t>(slot[r])].push_back(graph.id(i));
  }
  return out;
}

std::vector<std::pair<int, int>> realized_edges(const TradingGraph& graph, const PairVector& powers, double threshold) {
  std::vector<std::pair<int, int>> out;
  for (const auto& [u, v] : graph.edges()) {
    const auto k = *graph.pair_slot(u, v);
    if (std::abs(powers[k]) >= threshold) out.emplace_back(graph.id(u), graph.id(v));
  }
  return out;
}

}  // namespace p2p
