#include "p2p/analytic_clearing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace p2p {

std::string_view to_string(Binding binding) noexcept {
  switch (binding) {
    case Binding::Interior: return "interior";
    case Binding::AtMin: return "at_min";
    case Binding::AtMax: return "at_max";
    case Binding::Exited: return "exited";
  }
  return "unknown";
}

PoolSolution interior_pool_clearing(std::span<const Prosumer> prosumers) {
  if (prosumers.empty()) throw MarketError(ErrorCode::EmptySet, "no prosumers to clear");
  double weighted_b = 0.0;
  double weight = 0.0;
  for (const auto& p : prosumers) {
    weighted_b += p.b / (2.0 * p.a);
    weight += 1.0 / (2.0 * p.a);
  }
  PoolSolution out;
  out.price = weighted_b / weight;
  for (const auto& p : prosumers) {
    out.totals.push_back(out.price / (2.0 * p.a) - p.b / (2.0 * p.a));
    out.binding.push_back(Binding::Interior);
  }
  return out;
}

double clamped_response(const Prosumer& p, double price) {
  return std::clamp((price - p.b) / (2.0 * p.a), p.p_tr_min, p.p_tr_max);
}

double aggregate_response(std::span<const Prosumer> prosumers, double price) {
  double s = 0.0;
  for (const auto& p : prosumers) s += clamped_response(p, price);
  return s;
}

namespace {

constexpr double kBalanceTol = 1e-6;

Binding classify(const Prosumer& p, double price) {
  const double r = (price - p.b) / (2.0 * p.a);
  if (r <= p.p_tr_min) return p.p_tr_min == 0.0 ? Binding::Exited : Binding::AtMin;
  if (r >= p.p_tr_max) return p.p_tr_max == 0.0 ? Binding::Exited : Binding::AtMax;
  return Binding::Interior;
}

// Boundary of {price : pred(F(price))} for a monotone predicate that is false
// at lo and true at hi.
template <typename Pred>
double bisect_boundary(std::span<const Prosumer> prosumers, double lo, double hi, Pred pred) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (pred(aggregate_response(prosumers, mid))) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

PoolSolution uniform_price_clearing(std::span<const Prosumer> prosumers) {
  if (prosumers.empty()) throw MarketError(ErrorCode::EmptySet, "no prosumers to clear");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& p : prosumers) {
    lo = std::min(lo, p.b - 1.0);
    hi = std::max(hi, p.b + 1.0);
  }
  double width = hi - lo;
  int doublings = 0;
  while (aggregate_response(prosumers, lo) > kBalanceTol || aggregate_response(prosumers, hi) < -kBalanceTol) {
    if (++doublings > 60) throw MarketError(ErrorCode::NoRoot, "aggregate response never changes sign");
    lo -= width;
    hi += width;
    width *= 2.0;
  }

  // Left end of the zero set: F < 0 strictly below it. Right end: F > 0 above.
  const double left = aggregate_response(prosumers, lo) >= 0.0
                          ? lo
                          : bisect_boundary(prosumers, lo, hi, [](double f) { return f >= 0.0; });
  const double right = aggregate_response(prosumers, hi) <= 0.0
                           ? hi
                           : bisect_boundary(prosumers, lo, hi, [](double f) { return f > 0.0; });

  PoolSolution out;
  out.price = 0.5 * (left + right);
  out.degenerate = (right - left) > 1e-9;
  double balance = 0.0;
  for (const auto& p : prosumers) {
    out.totals.push_back(clamped_response(p, out.price));
    out.binding.push_back(classify(p, out.price));
    balance += out.totals.back();
  }
  if (std::abs(balance) > kBalanceTol) {
    throw MarketError(ErrorCode::NoRoot, "bisection ended with imbalance " + std::to_string(balance));
  }
  return out;
}

namespace {

constexpr double kPrimalTol = 1e-9;
constexpr double kDualTol = -1e-9;

// c_k(f) = G_k . f - h_k >= 0
struct Constraint {
  Eigen::RowVectorXd g;
  double h = 0.0;
  std::ptrdiff_t node = -1;  // for bound constraints
  int side = 0;              // +1 lower bound, -1 upper bound, 0 flow sign
};

struct FlowModel {
  std::vector<std::size_t> buyer;   // per edge
  std::vector<std::size_t> seller;  // per edge
  Eigen::MatrixXd incidence;        // n x E, +1 buyer, -1 seller
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  std::vector<Constraint> constraints;
};

FlowModel flow_model(const Market& market) {
  const auto& g = market.graph();
  const auto n = static_cast<Eigen::Index>(g.size());
  const auto e = static_cast<Eigen::Index>(g.num_edges());
  FlowModel fm;
  fm.incidence = Eigen::MatrixXd::Zero(n, e);
  Eigen::VectorXd w(e);
  Eigen::Index k = 0;
  for (const auto& [u, v] : g.edges()) {
    const bool u_buys = g.roles()[u] == Role::Buyer;
    const std::size_t bu = u_buys ? u : v;
    const std::size_t se = u_buys ? v : u;
    fm.buyer.push_back(bu);
    fm.seller.push_back(se);
    fm.incidence(static_cast<Eigen::Index>(bu), k) = 1.0;
    fm.incidence(static_cast<Eigen::Index>(se), k) = -1.0;
    w(k) = g.weights()[*g.pair_slot(bu, se)] - g.weights()[*g.pair_slot(se, bu)];
    ++k;
  }
  Eigen::VectorXd a2(n), b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a2(i) = 2.0 * market.prosumer(static_cast<std::size_t>(i)).a;
    b(i) = market.prosumer(static_cast<std::size_t>(i)).b;
  }
  fm.hessian = fm.incidence.transpose() * a2.asDiagonal() * fm.incidence;
  fm.gradient = fm.incidence.transpose() * b + w;

  for (Eigen::Index j = 0; j < e; ++j) {
    Constraint c;
    c.g = Eigen::RowVectorXd::Unit(e, j);
    fm.constraints.push_back(std::move(c));
  }
  // The zero side of a zero-extended interval is implied by the flow signs.
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = market.prosumer(static_cast<std::size_t>(i));
    if (p.role == Role::Seller || p.p_tr_min > 0.0) {
      fm.constraints.push_back({fm.incidence.row(i), p.p_tr_min, i, +1});
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = market.prosumer(static_cast<std::size_t>(i));
    if (p.role == Role::Buyer || p.p_tr_max < 0.0) {
      fm.constraints.push_back({-fm.incidence.row(i), -p.p_tr_max, i, -1});
    }
  }
  return fm;
}

// Next combination of `k` indices out of `n` in lexicographic order.
bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
  const std::size_t k = idx.size();
  for (std::size_t pos = k; pos-- > 0;) {
    if (idx[pos] < n - k + pos) {
      ++idx[pos];
      for (std::size_t q = pos + 1; q < k; ++q) idx[q] = idx[q - 1] + 1;
      return true;
    }
  }
  return false;
}

struct KktPoint {
  Eigen::VectorXd flow;
  Eigen::VectorXd mult;  // one per entry of `active`
  std::vector<std::size_t> active;
};

bool primal_feasible(const FlowModel& fm, const Eigen::VectorXd& f, double tol) {
  for (const auto& c : fm.constraints) {
    if (c.g.dot(f) - c.h < -tol) return false;
  }
  return true;
}

Eigen::MatrixXd working_rows(const FlowModel& fm, const std::vector<std::size_t>& w, Eigen::Index e) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(w.size()), e);
  for (std::size_t r = 0; r < w.size(); ++r) a.row(static_cast<Eigen::Index>(r)) = fm.constraints[w[r]].g;
  return a;
}

// Primal active-set method started from the zero flow. Returns nothing when
// zero is infeasible, the iteration budget runs out, or the final point fails
// the KKT checks; the caller then falls back to enumeration.
std::optional<KktPoint> guided_active_set(const FlowModel& fm, double primal_tol) {
  const auto e = static_cast<Eigen::Index>(fm.gradient.size());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(e);
  if (!primal_feasible(fm, x, 0.0)) return std::nullopt;

  std::vector<std::size_t> w;
  for (std::size_t k = 0; k < fm.constraints.size(); ++k) {
    if (fm.constraints[k].side == 0) w.push_back(k);
  }
  const double gscale = 1.0 + fm.gradient.norm();
  const double hscale = 1.0 + fm.hessian.norm();
  const std::size_t budget = 50 * (fm.constraints.size() + static_cast<std::size_t>(e)) + 100;

  for (std::size_t iter = 0; iter < budget; ++iter) {
    const Eigen::VectorXd grad = fm.hessian * x + fm.gradient;
    Eigen::MatrixXd z;
    if (w.empty()) {
      z = Eigen::MatrixXd::Identity(e, e);
    } else {
      const Eigen::MatrixXd a = working_rows(fm, w, e);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
      z = lu.rank() < e ? Eigen::MatrixXd(lu.kernel()) : Eigen::MatrixXd(e, 0);
    }

    Eigen::VectorXd p = Eigen::VectorXd::Zero(e);
    bool ray = false;
    if (z.cols() > 0) {
      // orthonormal basis keeps the reduced problem well scaled
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
      const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(e, z.cols());
      const Eigen::MatrixXd m = q.transpose() * fm.hessian * q;
      const Eigen::VectorXd rz = q.transpose() * grad;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
      const Eigen::VectorXd& mu = eig.eigenvalues();
      const Eigen::MatrixXd& v = eig.eigenvectors();
      const double cut = 1e-11 * hscale;
      Eigen::VectorXd dz = Eigen::VectorXd::Zero(z.cols());
      Eigen::VectorXd flat = Eigen::VectorXd::Zero(z.cols());
      for (Eigen::Index c = 0; c < mu.size(); ++c) {
        const double comp = v.col(c).dot(rz);
        if (mu(c) > cut) {
          dz -= (comp / mu(c)) * v.col(c);
        } else {
          flat -= comp * v.col(c);
        }
      }
      if (flat.norm() > 1e-10 * gscale) {
        ray = true;
        p = q * flat;
      } else {
        p = q * dz;
      }
    }

    if (p.norm() <= 1e-12 * (1.0 + x.norm())) {
      if (w.empty()) break;
      const Eigen::MatrixXd a = working_rows(fm, w, e);
      const Eigen::VectorXd lam = a.transpose().colPivHouseholderQr().solve(grad);
      Eigen::Index worst = 0;
      if (lam.minCoeff(&worst) >= kDualTol) break;
      w.erase(w.begin() + worst);
      continue;
    }

    double alpha = ray ? std::numeric_limits<double>::infinity() : 1.0;
    std::optional<std::size_t> blocking;
    for (std::size_t k = 0; k < fm.constraints.size(); ++k) {
      if (std::find(w.begin(), w.end(), k) != w.end()) continue;
      const auto& c = fm.constraints[k];
      const double gp = c.g.dot(p);
      if (gp >= -1e-14 * (1.0 + p.norm())) continue;
      const double step = std::max(0.0, c.g.dot(x) - c.h) / -gp;
      if (step < alpha) {
        alpha = step;
        blocking = k;
      }
    }
    if (!std::isfinite(alpha)) return std::nullopt;  // unbounded below
    x += alpha * p;
    if (blocking) w.push_back(*blocking);
    if (iter + 1 == budget) return std::nullopt;
  }

  for (std::size_t k : w) {
    if (fm.constraints[k].side == 0) x(static_cast<Eigen::Index>(k)) = 0.0;
  }
  KktPoint out;
  out.flow = x;
  out.active = w;
  const Eigen::VectorXd grad = fm.hessian * x + fm.gradient;
  if (w.empty()) {
    out.mult = Eigen::VectorXd(0);
    if (grad.norm() > 1e-8 * gscale) return std::nullopt;
  } else {
    const Eigen::MatrixXd a = working_rows(fm, w, e);
    out.mult = a.transpose().colPivHouseholderQr().solve(grad);
    if ((a.transpose() * out.mult - grad).norm() > 1e-8 * gscale) return std::nullopt;
    if (out.mult.minCoeff() < kDualTol) return std::nullopt;
    for (std::size_t k : w) {
      const auto& c = fm.constraints[k];
      if (std::abs(c.g.dot(x) - c.h) > primal_tol) return std::nullopt;
    }
  }
  if (!primal_feasible(fm, x, primal_tol)) return std::nullopt;
  return out;
}

std::optional<KktPoint> enumerate_active_sets(const FlowModel& fm, double primal_tol) {
  const auto e = static_cast<Eigen::Index>(fm.gradient.size());
  const std::size_t nc = fm.constraints.size();
  for (std::size_t card = 0; card <= nc; ++card) {
    std::vector<std::size_t> idx(card);
    std::iota(idx.begin(), idx.end(), 0);
    do {
      // a node cannot sit at two different bounds
      bool clash = false;
      for (std::size_t x = 0; x + 1 < card && !clash; ++x) {
        for (std::size_t y = x + 1; y < card; ++y) {
          const auto& cx = fm.constraints[idx[x]];
          const auto& cy = fm.constraints[idx[y]];
          if (cx.node >= 0 && cx.node == cy.node) clash = true;
        }
      }
      if (clash) continue;

      const auto ka = static_cast<Eigen::Index>(card);
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(e + ka, e + ka);
      Eigen::VectorXd rhs(e + ka);
      kkt.topLeftCorner(e, e) = fm.hessian;
      rhs.head(e) = -fm.gradient;
      for (Eigen::Index r = 0; r < ka; ++r) {
        const auto& c = fm.constraints[idx[static_cast<std::size_t>(r)]];
        kkt.block(0, e + r, e, 1) = -c.g.transpose();
        kkt.block(e + r, 0, 1, e) = c.g;
        rhs(e + r) = c.h;
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd z = lu.solve(rhs);
      Eigen::VectorXd f = z.head(e);
      // flow-sign constraints come first, so their index is the edge index
      for (std::size_t c : idx) {
        if (fm.constraints[c].side == 0) f(static_cast<Eigen::Index>(c)) = 0.0;
      }
      const Eigen::VectorXd lam = z.tail(ka);
      if (ka > 0 && lam.minCoeff() < kDualTol) continue;
      if (!primal_feasible(fm, f, primal_tol)) continue;
      return KktPoint{f, lam, idx};
    } while (next_combination(idx, nc));
  }
  return std::nullopt;
}

}  // namespace

P2PSolution kkt_active_set_qp(const Market& market, std::size_t max_edges) {
  const auto& g = market.graph();
  if (g.num_edges() > max_edges) {
    throw MarketError(ErrorCode::TooLarge, std::to_string(g.num_edges()) + " edges exceed the enumeration budget of " +
                                               std::to_string(max_edges));
  }
  if (g.num_edges() == 0) {
    for (const auto& p : market.prosumers()) {
      if (p.p_tr_min > 0.0 || p.p_tr_max < 0.0) {
        throw MarketError(ErrorCode::NoKktPoint, "prosumer " + std::to_string(p.id) + " must trade but has no edges");
      }
    }
    auto out = summarize(market, PairVector(0), PairVector(0));
    out.method = "kkt";
    return out;
  }
  const FlowModel fm = flow_model(market);
  const auto e = static_cast<Eigen::Index>(g.num_edges());
  double scale = 1.0;
  for (const auto& p : market.prosumers()) scale = std::max({scale, std::abs(p.p_tr_min), std::abs(p.p_tr_max)});
  const double primal_tol = kPrimalTol * scale;

  auto point = guided_active_set(fm, primal_tol);
  if (!point) point = enumerate_active_sets(fm, primal_tol);
  if (!point) throw MarketError(ErrorCode::NoKktPoint, "no active set satisfies the KKT conditions");
  const Eigen::VectorXd& flow = point->flow;
  const Eigen::VectorXd& mult = point->mult;
  const std::vector<std::size_t>& active = point->active;

  const std::size_t n = g.size();
  PairVector powers(g.num_pairs());
  for (Eigen::Index k = 0; k < e; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    powers[*g.pair_slot(fm.buyer[uk], fm.seller[uk])] = flow(k);
    powers[*g.pair_slot(fm.seller[uk], fm.buyer[uk])] = -flow(k);
  }
  const auto tot = totals(g, powers);

  // Effective marginal cost including bound multipliers.
  std::vector<double> eff(n);
  for (std::size_t i = 0; i < n; ++i) eff[i] = 2.0 * market.prosumer(i).a * tot[i] + market.prosumer(i).b;
  for (std::size_t r = 0; r < active.size(); ++r) {
    const auto& c = fm.constraints[active[r]];
    if (c.node >= 0) eff[static_cast<std::size_t>(c.node)] -= c.side * mult(static_cast<Eigen::Index>(r));
  }
  PairVector prices(g.num_pairs());
  for (std::size_t k = 0; k < g.num_pairs(); ++k) {
    const std::size_t i = g.pair_from(k);
    const std::size_t j = g.pair_to(k);
    const std::size_t rk = g.reverse(k);
    const double own = eff[i] + g.weights()[k];
    const double other = eff[j] + g.weights()[rk];
    prices[k] = 0.5 * (own + other);
  }
  auto out = summarize(market, std::move(powers), std::move(prices));
  out.status = SolveStatus::Exact;
  out.method = "kkt";
  return out;
}

P2PSolution clustered_clearing(const Market& market) {
  if (market.graph().has_weights()) {
    throw MarketError(ErrorCode::ValidationError, "clustered clearing requires zero trade weights");
  }
  auto sol = kkt_active_set_qp(market);
  for (const auto& c : sol.clusters) {
    if (c.price_spread > 1e-6) {
      throw MarketError(ErrorCode::InvariantViolation,
                        "cluster prices differ by " + std::to_string(c.price_spread));
    }
  }
  return sol;
}

std::vector<double> weighted_totals_system(const Market& market) {
  const auto& g = market.graph();
  const auto n = static_cast<Eigen::Index>(g.size());
  if (n == 0) throw MarketError(ErrorCode::EmptySet, "no prosumers");
  const auto comps = connected_components(g, market.edge_list());
  std::vector<std::vector<int>> groups = comps.components;
  for (int id : comps.non_traders) groups.push_back({id});

  const auto rows = static_cast<Eigen::Index>(g.num_edges() + groups.size());
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(rows, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(rows);
  Eigen::Index r = 0;
  for (const auto& [i, j] : g.edges()) {
    const auto ij = *g.pair_slot(i, j);
    const auto ji = g.reverse(ij);
    sys(r, static_cast<Eigen::Index>(i)) = 1.0;
    sys(r, static_cast<Eigen::Index>(j)) = -1.0;
    rhs(r) = market.prosumer(j).b + g.weights()[ji] - market.prosumer(i).b - g.weights()[ij];
    ++r;
  }
  for (const auto& members : groups) {
    for (int id : members) {
      const auto i = *g.index_of(id);
      sys(r, static_cast<Eigen::Index>(i)) = 1.0 / (2.0 * market.prosumer(i).a);
    }
    ++r;
  }
  const auto qr = sys.colPivHouseholderQr();
  if (qr.rank() < n) throw MarketError(ErrorCode::RankDeficient, "price-difference system is rank deficient");
  const Eigen::VectorXd q = qr.solve(rhs);
  const double residual = (sys * q - rhs).norm();
  if (residual > 1e-8 * (1.0 + rhs.norm())) {
    throw MarketError(ErrorCode::InteriorAssumptionFails,
                      "least-squares residual " + std::to_string(residual) + " - use kkt_active_set_qp");
  }
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = q(i) / (2.0 * market.prosumer(static_cast<std::size_t>(i)).a);
  return out;
}

MarketSolution oracle_clear(const Market& market) {
  const auto& g = market.graph();
  std::size_t buyers = 0;
  for (Role r : g.roles()) buyers += r == Role::Buyer ? 1 : 0;
  const std::size_t sellers = g.size() - buyers;
  const bool complete = g.num_edges() == buyers * sellers;
  if (!(complete && !g.has_weights())) {
    auto sol = kkt_active_set_qp(market);
    sol.method = "oracle";
    return sol;
  }
  PairVector powers(g.num_pairs());
  PairVector prices(g.num_pairs());
  if (g.num_edges() > 0) {
    const auto pool = uniform_price_clearing(market.prosumers());
    double volume = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.roles()[i] == Role::Buyer) volume += pool.totals[i];
    }
    for (std::size_t k = 0; k < g.num_pairs(); ++k) {
      prices[k] = pool.price;
      const std::size_t i = g.pair_from(k);
      const std::size_t j = g.pair_to(k);
      if (volume > 0.0 && g.roles()[i] == Role::Buyer) {
        const double f = pool.totals[i] * -pool.totals[j] / volume;
        powers[k] = f;
        powers[g.reverse(k)] = -f;
      }
    }
  }
  auto sol = summarize(market, std::move(powers), std::move(prices));
  sol.status = SolveStatus::Exact;
  sol.method = "oracle";
  return sol;
}

}  // namespace p2p
