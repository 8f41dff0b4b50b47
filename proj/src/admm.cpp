#include "p2p/admm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "p2p/parallel.hpp"

namespace p2p {

void AdmmConfig::validate() const {
  const auto fail = [](const std::string& why) { throw MarketError(ErrorCode::InvalidConfig, why); };
  if (!(rho > 0.0)) fail("rho must be positive");
  if (!(kappa > 0.0)) fail("kappa must be positive");
  if (!(mu1 > 0.0) || !(mu2 > 0.0)) fail("mu1 and mu2 must be positive");
  if (!(phi > rho * (1.0 / mu1 - 1.0))) fail("phi must exceed rho (1/mu1 - 1)");
  if (!(psi > rho * (1.0 / mu2 - 1.0))) fail("psi must exceed rho (1/mu2 - 1)");
  if (!(mu1 + mu2 < 2.0 - kappa)) fail("mu1 + mu2 must be below 2 - kappa");
  if (!(eps_abs > 0.0) || !(eps_rel >= 0.0)) fail("tolerances must be positive");
  if (max_iter < 1) fail("max_iter must be at least 1");
  if (workers < 1) fail("workers must be at least 1");
}

AdmmState AdmmState::zeros(const TradingGraph& graph) {
  const std::size_t m = graph.num_pairs();
  AdmmState s;
  s.p = PairVector(m);
  s.x = PairVector(m);
  s.u = PairVector(m);
  s.x_prev = PairVector(m);
  s.lambda = PairVector(m);
  return s;
}

void project_prosumer(std::span<const double> y, Role role, double lo, double hi, std::span<double> out) {
  const std::size_t n = y.size();
  for (double v : y) {
    if (!std::isfinite(v)) throw MarketError(ErrorCode::NonFiniteInput, "non-finite value in X-update");
  }
  const bool buyer = role == Role::Buyer;
  const auto clip = [buyer](double z) { return buyer ? std::max(z, 0.0) : std::min(z, 0.0); };
  const auto sum_at = [&](double nu) {
    double s = 0.0;
    for (double v : y) s += clip(v - nu);
    return s;
  };
  const double s0 = sum_at(0.0);
  double nu = 0.0;
  if (n > 0 && (s0 > hi || s0 < lo)) {
    const double target = s0 > hi ? hi : lo;
    const double bound = std::max(std::abs(lo), std::abs(hi));
    double nlo = *std::min_element(y.begin(), y.end()) - bound - 1.0;
    double nhi = *std::max_element(y.begin(), y.end()) + bound + 1.0;
    // sum_at is nonincreasing in nu
    for (int it = 0; it < 200 && nhi - nlo > 1e-12; ++it) {
      const double mid = 0.5 * (nlo + nhi);
      if (sum_at(mid) > target) {
        nlo = mid;
      } else {
        nhi = mid;
      }
    }
    nu = 0.5 * (nlo + nhi);
    // The active components are now known; solve for the shift exactly.
    double active_sum = 0.0;
    std::size_t active = 0;
    for (double v : y) {
      if (clip(v - nu) != 0.0) {
        active_sum += v;
        ++active;
      }
    }
    if (active > 0) {
      const double exact = (active_sum - target) / static_cast<double>(active);
      bool consistent = true;
      for (double v : y) {
        const bool was = clip(v - nu) != 0.0;
        const double z = v - exact;
        const bool now = buyer ? z > 0.0 : z < 0.0;
        if (was != now && z != 0.0) consistent = false;
      }
      if (consistent) nu = exact;
    }
  }
  for (std::size_t k = 0; k < n; ++k) out[k] = clip(y[k] - nu);
}

PairVector x_update(const AdmmState& state, const AdmmConfig& config, const Market& market) {
  const auto& g = market.graph();
  const double denom = config.rho + config.psi;
  PairVector y(g.num_pairs());
  for (std::size_t k = 0; k < g.num_pairs(); ++k) {
    y[k] = (config.rho * (state.p[k] + state.u[k]) + config.psi * state.x[k]) / denom;
    if (!std::isfinite(y[k])) throw MarketError(ErrorCode::NonFiniteInput, "non-finite iterate");
  }
  PairVector out(g.num_pairs());
  parallel_for(g.size(), config.workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& pr = market.prosumer(i);
      project_prosumer(y.row(g, i), pr.role, pr.p_tr_min, pr.p_tr_max, out.row(g, i));
    }
  });
  return out;
}

PairVector compute_v(const AdmmState& state, const AdmmConfig& config, const Market& market) {
  const auto& g = market.graph();
  PairVector v(g.num_pairs());
  const auto w = g.weights();
  parallel_for(g.num_pairs(), config.workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      v[k] = market.prosumer(g.pair_from(k)).b + w[k] + config.rho * (-state.x[k] + state.u[k]) -
             config.phi * state.p[k];
    }
  });
  return v;
}

std::vector<double> totals_rhs(const PairVector& v, const TradingGraph& graph) {
  std::vector<double> rhs(graph.size(), 0.0);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    double incoming = 0.0;
    double outgoing = 0.0;
    for (std::size_t k = graph.row_begin(i); k < graph.row_end(i); ++k) {
      incoming += v[graph.reverse(k)];
      outgoing += v[k];
    }
    rhs[i] = incoming - outgoing;
  }
  return rhs;
}

TotalsSolver::TotalsSolver(const Market& market, const AdmmConfig& config) : graph_(&market.graph()) {
  const auto& g = market.graph();
  const auto n = static_cast<Eigen::Index>(g.size());
  system_ = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    system_(ii, ii) = static_cast<double>(g.degree(i)) + (config.rho + config.phi) / market.prosumer(i).a;
    for (std::size_t j : g.neighbors(i)) system_(ii, static_cast<Eigen::Index>(j)) = -1.0;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double off = system_.row(i).cwiseAbs().sum() - std::abs(system_(i, i));
    if (!(system_(i, i) > off)) {
      throw MarketError(ErrorCode::SingularSystem, "(L + Gamma) is not strictly diagonally dominant");
    }
  }
  factor_.compute(system_);
  if (factor_.info() != Eigen::Success) {
    throw MarketError(ErrorCode::SingularSystem, "Cholesky factorisation of (L + Gamma) failed");
  }
}

std::vector<double> TotalsSolver::solve_rhs(std::span<const double> rhs) const {
  const auto n = static_cast<Eigen::Index>(rhs.size());
  const Eigen::VectorXd q = factor_.solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), n));
  return {q.data(), q.data() + n};
}

std::vector<double> TotalsSolver::solve(const PairVector& v) const {
  const auto rhs = totals_rhs(v, *graph_);
  return solve_rhs(rhs);
}

std::vector<double> solve_totals(const PairVector& v, const Market& market, const AdmmConfig& config) {
  return TotalsSolver(market, config).solve(v);
}

PUpdate p_update(const PairVector& v, std::span<const double> q, const AdmmConfig& config, const Market& market) {
  const auto& g = market.graph();
  const std::size_t m = g.num_pairs();
  const double denom = 2.0 * (config.rho + config.phi);
  PUpdate out{PairVector(m), PairVector(m)};
  parallel_for(m, config.workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const std::size_t r = g.reverse(k);
      const double own = v[k] + q[g.pair_from(k)];
      const double other = v[r] + q[g.pair_to(k)];
      out.p[k] = (other - own) / denom;
      out.lambda[k] = (other + own) / 2.0;
    }
  });
  return out;
}

PairVector u_update(const AdmmState& state, const AdmmConfig& config, const PairVector& p_next,
                    const PairVector& x_next) {
  PairVector u(state.u.size());
  const double step = config.kappa * config.rho;
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = state.u[k] + step * (p_next[k] - x_next[k]);
  return u;
}

ConvergenceCheck check_convergence(const AdmmState& state, const AdmmConfig& config, std::size_t num_prosumers) {
  double r2 = 0.0;
  double s2 = 0.0;
  double p2 = 0.0;
  double x2 = 0.0;
  double u2 = 0.0;
  for (std::size_t k = 0; k < state.p.size(); ++k) {
    const double r = state.p[k] - state.x[k];
    const double s = -config.rho * (state.x[k] - state.x_prev[k]);
    const double ru = config.rho * state.u[k];
    r2 += r * r;
    s2 += s * s;
    p2 += state.p[k] * state.p[k];
    x2 += state.x[k] * state.x[k];
    u2 += ru * ru;
  }
  const double root = std::sqrt(static_cast<double>(num_prosumers + state.p.size()));
  ConvergenceCheck out;
  out.record.iter = state.iter;
  out.record.primal_residual = std::sqrt(r2);
  out.record.dual_residual = std::sqrt(s2);
  out.record.eps_pri = root * config.eps_abs + config.eps_rel * std::max(std::sqrt(p2), std::sqrt(x2));
  out.record.eps_dual = root * config.eps_abs + config.eps_rel * std::sqrt(u2);
  out.status = (out.record.primal_residual <= out.record.eps_pri && out.record.dual_residual <= out.record.eps_dual)
                   ? Convergence::Converged
                   : Convergence::Continue;
  return out;
}

AdmmRun run(const Market& market, const AdmmConfig& config, const AdmmState* initial) {
  config.validate();
  const auto& g = market.graph();
  AdmmState state = initial ? *initial : AdmmState::zeros(g);
  if (state.p.size() != g.num_pairs() || state.x.size() != g.num_pairs() || state.u.size() != g.num_pairs()) {
    throw MarketError(ErrorCode::ValidationError, "initial state does not match the market's pair set");
  }
  if (state.lambda.size() != g.num_pairs()) state.lambda = PairVector(g.num_pairs());
  state.trace.clear();
  const TotalsSolver solver(market, config);

  AdmmState best;
  double best_score = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (int it = 0; it < config.max_iter; ++it) {
    PairVector x_next = x_update(state, config, market);
    const PairVector v = compute_v(state, config, market);
    const auto q = solver.solve(v);
    PUpdate pu = p_update(v, q, config, market);
    PairVector u_next = u_update(state, config, pu.p, x_next);

    state.x_prev = std::move(state.x);
    state.x = std::move(x_next);
    state.p = std::move(pu.p);
    state.lambda = std::move(pu.lambda);
    state.u = std::move(u_next);
    ++state.iter;

    const auto check = check_convergence(state, config, g.size());
    state.trace.push_back(check.record);
    if (check.status == Convergence::Converged) {
      converged = true;
      break;
    }
    const double score = std::max(check.record.primal_residual / check.record.eps_pri,
                                  check.record.dual_residual / check.record.eps_dual);
    if (score < best_score) {
      best_score = score;
      best = state;
      best.trace.clear();
    }
  }

  if (!converged) {
    auto trace = std::move(state.trace);
    state = std::move(best);
    state.trace = std::move(trace);
  }
  AdmmRun out;
  out.solution = summarize(market, state.p, state.lambda);
  out.solution.iterations = static_cast<int>(state.trace.size());
  out.solution.status = converged ? SolveStatus::Converged : SolveStatus::MaxIterExceeded;
  out.solution.trace = state.trace;
  out.solution.method = "admm";
  out.state = std::move(state);
  return out;
}

}  // namespace p2p
