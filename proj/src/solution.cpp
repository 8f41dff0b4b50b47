#include "p2p/solution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace p2p {

std::string_view to_string(SolveStatus status) noexcept {
  switch (status) {
    case SolveStatus::Exact: return "exact";
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterExceeded: return "max_iter_exceeded";
  }
  return "unknown";
}

bool MarketSolution::all_successful() const {
  return std::all_of(success.begin(), success.end(), [](bool s) { return s; });
}

MarketSolution summarize(const Market& market, PairVector powers, PairVector prices, double threshold) {
  const auto& g = market.graph();
  MarketSolution out;
  out.totals = totals(g, powers);
  out.success.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out.success[i] = std::abs(out.totals[i]) >= threshold;

  const auto active = realized_edges(g, powers, threshold);
  const auto comps = connected_components(g, active);
  out.non_traders = comps.non_traders;
  for (const auto& members : comps.components) {
    Cluster c;
    c.members = members;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0.0;
    int count = 0;
    for (const auto& [u, v] : active) {
      if (!std::binary_search(members.begin(), members.end(), u)) continue;
      const auto k = *g.pair_slot(*g.index_of(u), *g.index_of(v));
      for (const double lam : {prices[k], prices[g.reverse(k)]}) {
        lo = std::min(lo, lam);
        hi = std::max(hi, lam);
        sum += lam;
        ++count;
      }
    }
    c.price = sum / count;
    c.price_spread = hi - lo;
    out.clusters.push_back(std::move(c));
  }
  out.pair_powers = std::move(powers);
  out.pair_prices = std::move(prices);
  return out;
}

}  // namespace p2p
