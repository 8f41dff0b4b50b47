#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "p2p/errors.hpp"

namespace p2p {

/// Minimum |total| (kW) for a prosumer to count as having traded.
inline constexpr double kTradeThreshold = 0.05;

enum class Role { Buyer, Seller };

std::string_view to_string(Role role) noexcept;
Role role_from_string(std::string_view text);

/// A market participant for one clearing. Bounds are stored zero-extended:
/// a seller's feasible total lies in [p_tr_min, 0] and a buyer's in
/// [0, p_tr_max] unless a tighter interval was merged in (ramp limits).
struct Prosumer {
  int id = 0;
  Role role = Role::Buyer;
  double a = 0.0;  ///< quadratic cost coefficient, currency/kW^2
  double b = 0.0;  ///< linear cost coefficient, currency/kW
  double p_tr_min = 0.0;
  double p_tr_max = 0.0;

  bool operator==(const Prosumer&) const = default;
};

/// Builds a prosumer from raw bounds, widening the interval to
/// include zero on the side of the role. Throws InvalidProsumer.
Prosumer make_prosumer(int id, Role role, double a, double b, double p_tr_min, double p_tr_max);

/// Checks the invariants of an already zero-extended prosumer.
void validate_prosumer(const Prosumer& p);

/// Weight d_ij keyed by ordered id pair (i, j).
using WeightMap = std::map<std::pair<int, int>, double>;

class TradingGraph;

/// Validates and builds a trading graph. `prosumers` need not be sorted;
/// nodes are indexed by ascending id. Throws DuplicateId, DanglingEdge,
/// NonBipartiteEdge, WeightOnNonEdge.
TradingGraph build_graph(std::span<const Prosumer> prosumers, std::span<const std::pair<int, int>> edge_list,
                         const WeightMap& weights = {});

/// Undirected bipartite trading graph over prosumers indexed 0..n-1 (sorted
/// by id). Every edge {i, j} yields two directed pairs (i, j) and (j, i);
/// directed pairs are laid out row by row: all (i, *) for i = 0, 1, ... with
/// neighbours ascending. PairVectors use this layout.
class TradingGraph {
 public:
  TradingGraph() = default;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_pairs() const noexcept { return pair_from_.size(); }

  std::span<const int> ids() const noexcept { return ids_; }
  std::span<const Role> roles() const noexcept { return roles_; }
  int id(std::size_t index) const { return ids_.at(index); }
  std::optional<std::size_t> index_of(int id) const;

  /// Edges as index pairs (smaller index first), lexicographically sorted.
  std::span<const std::pair<std::size_t, std::size_t>> edges() const noexcept { return edges_; }

  std::size_t degree(std::size_t i) const noexcept { return row_offset_[i + 1] - row_offset_[i]; }
  std::span<const std::size_t> neighbors(std::size_t i) const noexcept {
    return {neighbor_.data() + row_offset_[i], degree(i)};
  }
  /// First directed-pair slot of row i.
  std::size_t row_begin(std::size_t i) const noexcept { return row_offset_[i]; }
  std::size_t row_end(std::size_t i) const noexcept { return row_offset_[i + 1]; }

  std::size_t pair_from(std::size_t k) const noexcept { return pair_from_[k]; }
  std::size_t pair_to(std::size_t k) const noexcept { return neighbor_[k]; }
  /// Slot of the opposite orientation (j, i) for slot k = (i, j).
  std::size_t reverse(std::size_t k) const noexcept { return reverse_[k]; }
  std::optional<std::size_t> pair_slot(std::size_t i, std::size_t j) const;

  /// d_ij aligned with the pair layout (0 where no weight was given).
  std::span<const double> weights() const noexcept { return weights_; }
  bool has_weights() const noexcept;

  bool adjacent(std::size_t i, std::size_t j) const { return pair_slot(i, j).has_value(); }

  friend TradingGraph build_graph(std::span<const Prosumer> prosumers, std::span<const std::pair<int, int>> edge_list,
                                  const WeightMap& weights);

 private:
  std::vector<int> ids_;
  std::vector<Role> roles_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::vector<std::size_t> row_offset_;
  std::vector<std::size_t> neighbor_;
  std::vector<std::size_t> pair_from_;
  std::vector<std::size_t> reverse_;
  std::vector<double> weights_;
};

/// Every buyer-seller pair.
std::vector<std::pair<int, int>> complete_bipartite_edges(std::span<const Prosumer> prosumers);

/// Real scalar per directed pair, in the graph's pair layout.
class PairVector {
 public:
  PairVector() = default;
  explicit PairVector(std::size_t m, double value = 0.0) : values_(m, value) {}
  explicit PairVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  double& operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }

  std::span<double> row(const TradingGraph& g, std::size_t i) {
    return {values_.data() + g.row_begin(i), g.degree(i)};
  }
  std::span<const double> row(const TradingGraph& g, std::size_t i) const {
    return {values_.data() + g.row_begin(i), g.degree(i)};
  }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  double norm() const;
  double max_abs() const;

  bool operator==(const PairVector&) const = default;

 private:
  std::vector<double> values_;
};

/// One market instance: prosumers sorted by id plus the graph over them.
class Market {
 public:
  Market(std::vector<Prosumer> prosumers, std::span<const std::pair<int, int>> edge_list,
         const WeightMap& weights = {});

  const TradingGraph& graph() const noexcept { return graph_; }
  std::span<const Prosumer> prosumers() const noexcept { return prosumers_; }
  const Prosumer& prosumer(std::size_t index) const { return prosumers_.at(index); }
  std::size_t size() const noexcept { return prosumers_.size(); }

  std::vector<std::pair<int, int>> edge_list() const;
  WeightMap weight_map() const;

  /// Same graph and weights, different cost parameters/bounds. Ids and roles
  /// must not change.
  Market with_prosumers(std::vector<Prosumer> prosumers) const;

 private:
  std::vector<Prosumer> prosumers_;
  TradingGraph graph_;
};

/// Dense views of the graph. The incidence matrix orients every edge from
/// the smaller id (+1) to the larger id (-1).
struct GraphAlgebra {
  Eigen::MatrixXi adjacency;
  Eigen::MatrixXi degree;
  Eigen::MatrixXi laplacian;
  Eigen::MatrixXi incidence;
};

GraphAlgebra graph_algebra(const TradingGraph& graph);

/// a P_tr^2 + b P_tr + sum_j d_ij P_ij, where `trades` maps neighbour id to
/// P_ij and must list exactly the neighbours of the prosumer.
double cost(const Prosumer& prosumer, const std::map<int, double>& trades, const TradingGraph& graph);

/// Cost of prosumer `i` given a full pair vector.
double cost(const Market& market, std::size_t i, const PairVector& trades);

/// Per-prosumer totals P_i,tr = sum_j P_ij.
std::vector<double> totals(const TradingGraph& graph, const PairVector& trades);

struct Components {
  std::vector<std::vector<int>> components;  ///< ids, each ascending; ordered by smallest id
  std::vector<int> non_traders;              ///< ids touched by no active edge
};

/// Connected components of the subgraph made of `active_edges` (id pairs),
/// which must be edges of `graph`.
Components connected_components(const TradingGraph& graph, std::span<const std::pair<int, int>> active_edges);

/// Id pairs of edges whose |P_ij| reaches `threshold`.
std::vector<std::pair<int, int>> realized_edges(const TradingGraph& graph, const PairVector& powers,
                                                double threshold = kTradeThreshold);

}  // namespace p2p
