#pragma once

// Iterative alternating sequential (IAS) MAP estimation: alternate the
// conditional maximizer in alpha (priorconditioned least squares) with the
// componentwise conditional maximizer in theta.

#include "hbloc/hypermodel.hpp"
#include "hbloc/solver.hpp"

#include <optional>
#include <vector>

namespace hbloc {

struct IasConfig {
  int iterations = 15;
  /// Initial variances; empty means theta0 for every group.
  Vector theta_init;
  SolverConfig solver;
  /// Solve every alpha step exactly (direct factorization) instead of CGLS.
  bool exact_mode = false;
  bool record_history = true;
  bool record_iterates = false;
  /// Stop early once ||alpha_i - alpha_{i-1}|| / ||alpha_i|| falls below this.
  std::optional<double> relative_change_stop;

  void validate() const {
    if (iterations < 1) throw DomainError("IasConfig: iterations must be >= 1");
    for (Index k = 0; k < theta_init.size(); ++k)
      if (!(theta_init[k] > 0.0)) throw DomainError("IasConfig: theta_init must be > 0");
    solver.validate();
  }

  SolverConfig inner() const {
    SolverConfig c = solver;
    if (exact_mode) c.direct = true;
    return c;
  }
};

struct IasResult {
  PosteriorState state;
  /// log posterior at the initial state (alpha = 0) followed by one entry per iteration.
  std::vector<double> log_posterior_history;
  std::vector<bool> floored;
  std::vector<int> inner_iters;
  std::vector<PosteriorState> iterates;
  int iterations_run = 0;
};

struct SweepResult {
  PosteriorState state;
  std::vector<bool> floored;
  int inner_iters = 0;
};

/// One alternation: alpha from the current theta, then theta from that alpha.
inline SweepResult ias_sweep(const PosteriorState& state, const Matrix& M, const Vector& b, const NoiseModel& noise,
                             const HyperModel& hm, const VarianceGrouping& grouping, const SolverConfig& solver) {
  const auto a = priorconditioned_solve(M, b, noise, state.theta, grouping, solver);
  auto t = update_theta_all(grouping.group_amplitudes(a.alpha), hm, grouping);
  return {{a.alpha, std::move(t.theta)}, std::move(t.floored), a.iterations};
}

inline PosteriorState ias_single_sweep(const PosteriorState& state, const Matrix& M, const Vector& b,
                                       const NoiseModel& noise, const HyperModel& hm,
                                       const VarianceGrouping& grouping, const SolverConfig& solver) {
  return ias_sweep(state, M, b, noise, hm, grouping, solver).state;
}

inline IasResult ias_map(const Matrix& M, const Vector& b, const NoiseModel& noise, const HyperModel& hm,
                         const VarianceGrouping& grouping, const IasConfig& cfg) {
  cfg.validate();
  hm.validate();
  require_dims(M.cols() == grouping.num_coefficients() && M.rows() == b.size(),
               "ias_map: lead field does not match data/grouping");

  IasResult out;
  out.state.alpha = Vector::Zero(M.cols());
  if (cfg.theta_init.size() == 0) {
    out.state.theta = Vector::Constant(grouping.num_groups(), hm.theta0);
  } else if (cfg.theta_init.size() == 1) {
    out.state.theta = Vector::Constant(grouping.num_groups(), cfg.theta_init[0]);
  } else {
    require_dims(cfg.theta_init.size() == grouping.num_groups(), "ias_map: theta_init size mismatch");
    out.state.theta = cfg.theta_init;
  }
  out.floored.assign(static_cast<std::size_t>(grouping.num_groups()), false);

  const SolverConfig inner = cfg.inner();
  if (cfg.record_history) out.log_posterior_history.push_back(log_posterior(out.state, b, M, noise, hm, grouping));
  for (int i = 0; i < cfg.iterations; ++i) {
    const Vector previous = out.state.alpha;
    auto sweep = ias_sweep(out.state, M, b, noise, hm, grouping, inner);
    out.state = std::move(sweep.state);
    out.floored = std::move(sweep.floored);
    out.inner_iters.push_back(sweep.inner_iters);
    out.iterations_run = i + 1;
    if (cfg.record_history) out.log_posterior_history.push_back(log_posterior(out.state, b, M, noise, hm, grouping));
    if (cfg.record_iterates) out.iterates.push_back(out.state);
    if (cfg.relative_change_stop) {
      const double n = out.state.alpha.norm();
      if (n > 0.0 && (out.state.alpha - previous).norm() < *cfg.relative_change_stop * n) break;
    }
  }
  return out;
}

}  // namespace hbloc
