#include "p2p/learning.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace p2p {

void LearningPolicy::validate() const {
  if (!(delta_b > 0.0)) throw MarketError(ErrorCode::InvalidConfig, "delta_b must be positive");
  if (!(gamma > 1.0)) throw MarketError(ErrorCode::InvalidConfig, "gamma must exceed 1");
  if (max_rounds < 1) throw MarketError(ErrorCode::InvalidConfig, "max_rounds must be at least 1");
  if (!(success_threshold > 0.0)) throw MarketError(ErrorCode::InvalidConfig, "success_threshold must be positive");
}

namespace {

LearningRound record(int round, const Market& market, const MarketSolution& sol, double threshold) {
  LearningRound r;
  r.round = round;
  for (const Prosumer& p : market.prosumers()) {
    r.a.push_back(p.a);
    r.b.push_back(p.b);
  }
  r.totals = sol.totals;
  for (double t : sol.totals) r.success.push_back(std::abs(t) >= threshold);
  return r;
}

std::size_t count_success(const LearningRound& r) {
  std::size_t n = 0;
  for (bool s : r.success) n += s ? 1 : 0;
  return n;
}

bool adapts(const std::set<int>& group, int id) { return group.empty() || group.count(id) > 0; }

bool interior(const Prosumer& p, double total, double threshold) {
  return std::abs(total) >= threshold && total > p.p_tr_min + 1e-9 && total < p.p_tr_max - 1e-9;
}

}  // namespace

LearningResult learn_successful_trading(const Market& market, const LearningPolicy& policy, const ClearFn& clear,
                                        const ClearFn& confirm, const std::set<int>& participants) {
  policy.validate();
  std::vector<Market> markets{market};
  std::vector<MarketSolution> solutions{clear(market)};
  std::vector<LearningRound> history{record(0, market, solutions.back(), policy.success_threshold)};

  int rounds = 0;
  bool done = count_success(history.back()) == market.size();
  while (!done && rounds < policy.max_rounds) {
    std::vector<Prosumer> next(market.prosumers().begin(), market.prosumers().end());
    const LearningRound& last = history.back();
    const Market& current = markets.back();
    bool changed = false;
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = current.prosumer(i);
      if (last.success[i] || !adapts(participants, next[i].id)) continue;
      next[i].b += next[i].role == Role::Buyer ? -policy.delta_b : policy.delta_b;
      changed = true;
    }
    if (!changed) break;
    ++rounds;
    markets.push_back(current.with_prosumers(std::move(next)));
    solutions.push_back(clear(markets.back()));
    history.push_back(record(rounds, markets.back(), solutions.back(), policy.success_threshold));
    done = count_success(history.back()) == market.size();
  }

  std::size_t pick = history.size() - 1;
  if (!done) {
    for (std::size_t r = 0; r < history.size(); ++r) {
      if (count_success(history[r]) > count_success(history[pick])) pick = r;
    }
    for (std::size_t r = 0; r < pick; ++r) {
      if (count_success(history[r]) == count_success(history[pick])) {
        pick = r;
        break;
      }
    }
  }

  LearningResult out{markets[pick], rounds, done, static_cast<int>(pick), std::move(history), solutions[pick], {}};
  if (confirm) out.confirmation = confirm(out.market);
  return out;
}

BoostResult learn_boost_volume(const Market& market, const LearningPolicy& policy, const ClearFn& clear,
                               const std::set<int>& opted_in) {
  policy.validate();
  std::vector<Prosumer> next(market.prosumers().begin(), market.prosumers().end());
  for (Prosumer& p : next) {
    if (adapts(opted_in, p.id)) p.a /= policy.gamma;
  }
  Market boosted = market.with_prosumers(next);
  MarketSolution before = clear(market);
  MarketSolution after = clear(boosted);

  bool ok = true;
  for (std::size_t i = 0; i < market.size(); ++i) {
    const Prosumer& p = market.prosumer(i);
    if (!adapts(opted_in, p.id)) continue;
    if (!interior(p, before.totals[i], policy.success_threshold) ||
        !interior(boosted.prosumer(i), after.totals[i], policy.success_threshold)) {
      continue;
    }
    if (std::abs(after.totals[i]) + 1e-9 < std::abs(before.totals[i])) ok = false;
  }
  BoostResult out{std::move(boosted), before.totals, after.totals, std::move(before), std::move(after), ok};
  return out;
}

void write_learning_history(std::ostream& out, const Market& market, const std::vector<LearningRound>& history) {
  out << "round,prosumer,b,a,total,success\n";
  out << std::setprecision(12);
  for (const LearningRound& r : history) {
    for (std::size_t i = 0; i < market.size(); ++i) {
      out << r.round << ',' << market.prosumer(i).id << ',' << r.b[i] << ',' << r.a[i] << ',' << r.totals[i] << ','
          << (r.success[i] ? 1 : 0) << '\n';
    }
  }
}

}  // namespace p2p
