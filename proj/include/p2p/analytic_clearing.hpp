#pragma once

#include <span>
#include <vector>

#include "p2p/market_model.hpp"
#include "p2p/solution.hpp"

namespace p2p {

enum class Binding { Interior, AtMin, AtMax, Exited };

std::string_view to_string(Binding binding) noexcept;

/// Pool-market clearing: one price for everybody.
struct PoolSolution {
  double price = 0.0;
  std::vector<double> totals;
  std::vector<Binding> binding;
  bool degenerate = false;  ///< aggregate response was flat at zero; price is the interval midpoint
};

/// Exact quadratic-programming solution of the bilateral problem.
using P2PSolution = MarketSolution;

/// Closed-form interior clearing: lambda = sum(b/2a) / sum(1/2a) and
/// P_i = (lambda - b_i) / 2a_i. Bounds are ignored. Throws EmptySet.
PoolSolution interior_pool_clearing(std::span<const Prosumer> prosumers);

/// Response of one prosumer to `price`, clamped to its feasible interval.
double clamped_response(const Prosumer& p, double price);

/// Sum of clamped responses; nondecreasing in price.
double aggregate_response(std::span<const Prosumer> prosumers, double price);

/// Bounded pool clearing by bisection on the aggregate response.
/// Throws EmptySet, NoRoot.
PoolSolution uniform_price_clearing(std::span<const Prosumer> prosumers);

/// Exhaustive active-set solver for the bilateral market with bounds, sign
/// constraints and trade weights. Enumerates active sets by ascending
/// cardinality; test-scale only. Throws TooLarge, NoKktPoint.
P2PSolution kkt_active_set_qp(const Market& market, std::size_t max_edges = 16);

/// kkt_active_set_qp on a zero-weight market, checked to clear at one price
/// per realized-trade cluster. Throws ValidationError on nonzero weights,
/// InvariantViolation if a cluster is not uniformly priced.
P2PSolution clustered_clearing(const Market& market);

/// Interior totals from the stacked price-difference system with trade
/// weights, solved by least squares with one balance row per connected
/// component. Throws InteriorAssumptionFails when the system is
/// inconsistent (some sign or bound constraint must be active).
std::vector<double> weighted_totals_system(const Market& market);

/// Best available exact clearing: the pool oracle with a proportional pair
/// split on complete zero-weight graphs, otherwise kkt_active_set_qp.
MarketSolution oracle_clear(const Market& market);

}  // namespace p2p
