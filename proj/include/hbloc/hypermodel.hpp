#pragma once

// Conditionally Gaussian prior with a generalized gamma hyperprior on the
// variances, the resulting log posterior, and the per-component variance
// updates used by the MAP iteration and the Gibbs sampler.

#include "hbloc/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace hbloc {

/// Generalized gamma hyperprior GenGamma(r, beta, theta0):
///   pi(theta) ~ prod_k theta_k^(r beta - 1) exp(-(theta_k/theta0)^r).
/// r = 1 is the gamma distribution, r = -1 the inverse gamma distribution.
struct HyperModel {
  double r = 1.0;
  double beta = 1.5;
  double theta0 = 1.0;
  /// Use the constant (r beta - 3/2) on sum log theta_k for every variance
  /// group regardless of its size. The self-consistent constant for a group
  /// of g coefficients is (r beta - 1 - g/2); both agree when g = 1.
  bool unit_group_normalization = false;

  HyperModel() = default;
  HyperModel(double r_, double beta_, double theta0_, bool unit_group_norm = false)
      : r(r_), beta(beta_), theta0(theta0_), unit_group_normalization(unit_group_norm) {
    validate();
  }

  void validate() const {
    if (r == 0.0 || !std::isfinite(r)) throw DomainError("HyperModel: r must be nonzero and finite");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("HyperModel: beta must be > 0");
    if (!(theta0 > 0.0) || !std::isfinite(theta0)) throw DomainError("HyperModel: theta0 must be > 0");
  }

  static HyperModel gamma(double beta, double theta0) { return {1.0, beta, theta0}; }
  static HyperModel inverse_gamma(double beta, double theta0) { return {-1.0, beta, theta0}; }

  /// Components that cannot reach a positive stationary point are set here.
  double theta_floor() const { return theta0 * 1e-12; }
};

/// Weight of log(theta_k) contributed by the Gaussian normalization of group k.
inline double prior_log_weight(const HyperModel& hm, Index group_size) {
  return hm.unit_group_normalization ? 0.5 : 0.5 * static_cast<double>(group_size);
}

/// Coefficient of log(theta_k) in the joint log posterior: r beta - 1 - g/2.
inline double log_theta_coefficient(const HyperModel& hm, Index group_size) {
  return hm.r * hm.beta - 1.0 - prior_log_weight(hm, group_size);
}

inline void require_positive(const Vector& theta, const char* who) {
  for (Index k = 0; k < theta.size(); ++k)
    if (!(theta[k] > 0.0)) throw DomainError(std::string(who) + ": theta components must be > 0");
}

inline double log_hyperprior(const Vector& theta, const HyperModel& hm) {
  require_positive(theta, "log_hyperprior");
  double s = 0.0;
  for (Index k = 0; k < theta.size(); ++k)
    s += -std::pow(theta[k] / hm.theta0, hm.r) + (hm.r * hm.beta - 1.0) * std::log(theta[k]);
  return s;
}

inline double log_likelihood(const Vector& alpha, const Vector& b, const Matrix& M, const NoiseModel& noise) {
  require_dims(M.cols() == alpha.size() && M.rows() == b.size(), "log_likelihood: dimension mismatch");
  return -(b - M * alpha).squaredNorm() / (2.0 * noise.sigma * noise.sigma);
}

/// log pi(alpha | theta) up to a constant: -1/2 sum A_k/theta_k - w_k sum log theta_k.
inline double log_conditional_prior(const Vector& alpha, const Vector& theta, const VarianceGrouping& grouping,
                                    const HyperModel& hm) {
  require_dims(theta.size() == grouping.num_groups(), "log_conditional_prior: theta size mismatch");
  require_positive(theta, "log_conditional_prior");
  const Vector amp = grouping.group_amplitudes(alpha);
  double s = 0.0;
  for (Index k = 0; k < theta.size(); ++k)
    s += -0.5 * amp[k] / theta[k] - prior_log_weight(hm, grouping.group_size(k)) * std::log(theta[k]);
  return s;
}

inline double log_posterior(const PosteriorState& state, const Vector& b, const Matrix& M, const NoiseModel& noise,
                            const HyperModel& hm, const VarianceGrouping& grouping) {
  require_dims(state.alpha.size() == grouping.num_coefficients() && state.theta.size() == grouping.num_groups(),
               "log_posterior: state does not match grouping");
  require_dims(M.cols() == state.alpha.size() && M.rows() == b.size(), "log_posterior: lead field mismatch");
  require_positive(state.theta, "log_posterior");
  const Vector amp = grouping.group_amplitudes(state.alpha);
  double s = log_likelihood(state.alpha, b, M, noise);
  for (Index k = 0; k < state.theta.size(); ++k) {
    const double t = state.theta[k];
    s += -0.5 * amp[k] / t - std::pow(t / hm.theta0, hm.r) +
         log_theta_coefficient(hm, grouping.group_size(k)) * std::log(t);
  }
  return s;
}

/// Conditional log density of one variance component given its group amplitude.
inline double conditional_log_density(double theta, double amplitude, const HyperModel& hm, Index group_size) {
  return -0.5 * amplitude / theta - std::pow(theta / hm.theta0, hm.r) +
         log_theta_coefficient(hm, group_size) * std::log(theta);
}

/// theta * d/dtheta of the conditional log density, i.e. its derivative in log theta.
/// Strictly decreasing in log theta for every r != 0 and amplitude >= 0.
inline double conditional_log_slope(double theta, double amplitude, const HyperModel& hm, Index group_size) {
  return 0.5 * amplitude / theta - hm.r * std::pow(theta / hm.theta0, hm.r) + log_theta_coefficient(hm, group_size);
}

struct ThetaUpdate {
  double theta = 0.0;
  bool floored = false;
};

namespace detail {

inline void check_amplitude(double a) {
  if (!(a >= 0.0) || !std::isfinite(a)) throw DomainError("theta update: amplitude must be finite and >= 0");
}

inline ThetaUpdate floor_of(const HyperModel& hm) { return {hm.theta_floor(), true}; }

inline bool is_negative_integer(double r, int& q) {
  const double rr = std::round(r);
  if (r < -1.5 && std::abs(r - rr) < 1e-12 && rr >= -64.0) {
    q = static_cast<int>(-rr);
    return true;
  }
  return false;
}

inline bool closed_form_applies(const HyperModel& hm, Index g) {
  const double c = log_theta_coefficient(hm, g);
  const double scale = std::abs(hm.r * hm.beta) + 1.0 + 0.5 * static_cast<double>(g);
  return hm.r > 0.0 && std::abs(c) <= 1e-14 * scale;
}

}  // namespace detail

/// Gamma hyperprior (r = 1): theta = theta0/2 (eta + sqrt(eta^2 + 2A/theta0)),
/// eta = beta - 1 - g/2.
inline ThetaUpdate update_theta_gamma(double amplitude, const HyperModel& hm, Index group_size = 1) {
  detail::check_amplitude(amplitude);
  if (hm.r != 1.0) throw DomainError("update_theta_gamma: requires r = 1");
  const double eta = log_theta_coefficient(hm, group_size);
  if (amplitude == 0.0 && eta <= 0.0) return detail::floor_of(hm);
  const double root = std::sqrt(eta * eta + 2.0 * amplitude / hm.theta0);
  // eta < 0 cancels in eta + root; use the conjugate form there.
  const double theta = eta >= 0.0 ? 0.5 * hm.theta0 * (eta + root) : amplitude / (root - eta);
  if (!(theta > hm.theta_floor())) return detail::floor_of(hm);
  return {theta, false};
}

/// Inverse gamma hyperprior (r = -1): theta = (A/2 + theta0)/kappa, kappa = beta + 1 + g/2.
inline ThetaUpdate update_theta_invgamma(double amplitude, const HyperModel& hm, Index group_size = 1) {
  detail::check_amplitude(amplitude);
  if (hm.r != -1.0) throw DomainError("update_theta_invgamma: requires r = -1");
  const double kappa = -log_theta_coefficient(hm, group_size);
  return {(0.5 * amplitude + hm.theta0) / kappa, false};
}

/// Positive roots of q + a x^(q-1) + c x^q = 0 (x = theta/theta0) from the
/// eigenvalues of the companion matrix, each polished by Newton steps.
inline std::vector<double> companion_positive_roots(int q, double a, double c) {
  // Monic form: x^q + (a/c) x^(q-1) + (q/c).
  Matrix comp = Matrix::Zero(q, q);
  Vector coeff = Vector::Zero(q);  // coeff[j] multiplies x^j
  coeff[q - 1] = a / c;
  coeff[0] += static_cast<double>(q) / c;
  for (int j = 0; j < q; ++j) comp(0, j) = -coeff[q - 1 - j];
  for (int i = 1; i < q; ++i) comp(i, i - 1) = 1.0;
  Eigen::EigenSolver<Matrix> es(comp, false);
  if (es.info() != Eigen::Success) throw NumericalError("companion eigenvalue solve failed");

  auto poly = [&](double x, double& dp) {
    // p(x) = c x^q + a x^(q-1) + q
    const double xq1 = std::pow(x, q - 1);
    dp = c * q * xq1 + (q > 1 ? a * (q - 1) * std::pow(x, q - 2) : 0.0);
    return c * xq1 * x + a * xq1 + q;
  };

  std::vector<double> roots;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const auto lam = es.eigenvalues()[i];
    if (lam.real() <= 0.0 || std::abs(lam.imag()) > 1e-8 * std::abs(lam)) continue;
    double x = lam.real();
    for (int it = 0; it < 8; ++it) {
      double dp = 0.0;
      const double p = poly(x, dp);
      if (dp == 0.0) break;
      const double step = p / dp;
      x -= step;
      if (std::abs(step) <= 1e-16 * std::abs(x)) break;
    }
    if (x > 0.0) roots.push_back(x);
  }
  return roots;
}

/// Higher order inverse gamma (r = -q, q >= 2): theta is the positive root of
///   q theta0^q + A/2 theta^(q-1) - (q beta + 1 + g/2) theta^q = 0.
inline ThetaUpdate update_theta_higher_invgamma(double amplitude, int q, const HyperModel& hm, Index group_size = 1) {
  detail::check_amplitude(amplitude);
  if (q < 2) throw DomainError("update_theta_higher_invgamma: q must be >= 2");
  if (hm.r != -static_cast<double>(q)) throw DomainError("update_theta_higher_invgamma: requires r = -q");
  const double c = log_theta_coefficient(hm, group_size);
  const double a = 0.5 * amplitude / hm.theta0;
  const auto roots = companion_positive_roots(q, a, c);
  if (roots.empty()) return detail::floor_of(hm);
  // Several positive roots cannot occur for this family, but keep MAP
  // semantics if rounding produces more than one: argmax, ties to larger.
  double best = -std::numeric_limits<double>::infinity();
  double best_theta = 0.0;
  for (double x : roots) {
    const double t = x * hm.theta0;
    const double v = conditional_log_density(t, amplitude, hm, group_size);
    if (v > best || (v == best && t > best_theta)) {
      best = v;
      best_theta = t;
    }
  }
  if (!(best_theta > hm.theta_floor())) return detail::floor_of(hm);
  return {best_theta, false};
}

/// Safeguarded Newton on the stationarity equation in u = log theta. The
/// slope is strictly decreasing in u, so a bracketed root is unique.
inline ThetaUpdate solve_theta_stationary(double amplitude, const HyperModel& hm, Index group_size) {
  const double ln10 = std::log(10.0);
  const double u0 = std::log(hm.theta0);
  const double ufloor = std::log(hm.theta_floor());
  auto h = [&](double u) { return conditional_log_slope(std::exp(u), amplitude, hm, group_size); };
  auto dh = [&](double u) {
    const double t = std::exp(u);
    return -0.5 * amplitude / t - hm.r * hm.r * std::pow(t / hm.theta0, hm.r);
  };

  double lo = u0 - 8.0 * ln10;
  double hi = u0 + 8.0 * ln10;
  double hlo = h(lo);
  double hhi = h(hi);
  for (int i = 0; i < 6 && hhi > 0.0; ++i) {
    lo = hi;
    hlo = hhi;
    hi += 8.0 * ln10;
    hhi = h(hi);
  }
  if (hhi > 0.0) throw NumericalError("theta update: stationary point above search range");
  if (hlo < 0.0) {
    hi = lo;
    hhi = hlo;
    lo = std::max(ufloor, lo - 8.0 * ln10);
    hlo = h(lo);
    if (hlo < 0.0) return detail::floor_of(hm);
  }
  if (hlo == 0.0) return {std::exp(lo), false};

  double u = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double hu = h(u);
    if (hu == 0.0) break;
    if (hu > 0.0)
      lo = u;
    else
      hi = u;
    const double d = dh(u);
    double next = u - hu / d;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - u);
    u = next;
    if (step <= 1e-14 * std::max(1.0, std::abs(u)) || hi - lo <= 1e-15 * std::max(1.0, std::abs(u))) break;
  }
  const double theta = std::exp(u);
  if (!(dh(u) < 0.0)) throw NumericalError("theta update: stationary point is not a local maximum");
  if (!(theta > hm.theta_floor())) return detail::floor_of(hm);
  return {theta, false};
}

/// Generalized gamma update. Dispatches to the gamma / inverse gamma closed
/// forms at r = +-1, to the closed form when the log coefficient vanishes,
/// to the companion matrix for negative integer r, and otherwise to the
/// bracketed root finder.
inline ThetaUpdate update_theta_gengamma(double amplitude, const HyperModel& hm, Index group_size = 1) {
  detail::check_amplitude(amplitude);
  if (hm.r == 1.0) return update_theta_gamma(amplitude, hm, group_size);
  if (hm.r == -1.0) return update_theta_invgamma(amplitude, hm, group_size);
  if (detail::closed_form_applies(hm, group_size)) {
    if (amplitude == 0.0) return detail::floor_of(hm);
    const double theta = std::pow(std::pow(hm.theta0, hm.r) * amplitude / (2.0 * hm.r), 1.0 / (hm.r + 1.0));
    if (!(theta > hm.theta_floor())) return detail::floor_of(hm);
    return {theta, false};
  }
  int q = 0;
  if (detail::is_negative_integer(hm.r, q)) return update_theta_higher_invgamma(amplitude, q, hm, group_size);
  return solve_theta_stationary(amplitude, hm, group_size);
}

/// Componentwise theta step over all variance groups.
struct ThetaStep {
  Vector theta;
  std::vector<bool> floored;
};

inline ThetaStep update_theta_all(const Vector& amplitudes, const HyperModel& hm, const VarianceGrouping& grouping) {
  require_dims(amplitudes.size() == grouping.num_groups(), "update_theta_all: amplitude size mismatch");
  ThetaStep out{Vector(amplitudes.size()), std::vector<bool>(static_cast<std::size_t>(amplitudes.size()))};
  for (Index k = 0; k < amplitudes.size(); ++k) {
    const auto u = update_theta_gengamma(amplitudes[k], hm, grouping.group_size(k));
    out.theta[k] = u.theta;
    out.floored[static_cast<std::size_t>(k)] = u.floored;
  }
  return out;
}

enum class PenaltyRegime { minimum_current, lp, minimum_support };

/// l^p exponent of the penalized problem reproduced when r beta = 3/2.
inline double lp_exponent(double r) { return 2.0 * r / (r + 1.0); }

/// delta = 2 sigma^2 (2r/theta0^r)^(1/(r+1)), r = p/(2-p).
inline double lp_penalty_delta(double p, double theta0, double sigma) {
  if (!(p > 0.0 && p < 2.0)) throw DomainError("lp_penalty_delta: p must lie in (0, 2)");
  const double r = p / (2.0 - p);
  return 2.0 * sigma * sigma * std::pow(2.0 * r / std::pow(theta0, r), 1.0 / (r + 1.0));
}

inline std::optional<PenaltyRegime> penalty_regime(const HyperModel& hm) {
  if (hm.r == 1.0 && hm.beta == 1.5) return PenaltyRegime::minimum_current;
  if (hm.r == -1.0) return PenaltyRegime::minimum_support;
  if (hm.r > 0.0 && std::abs(hm.r * hm.beta - 1.5) <= 1e-14 * 1.5) return PenaltyRegime::lp;
  return std::nullopt;
}

/// Regularization weight of the penalized least squares problem
/// ||b - M a||^2 + delta * penalty(a) whose fixed point iteration the MAP
/// iteration reproduces.
inline double equivalent_penalty_delta(const HyperModel& hm, const NoiseModel& noise) {
  const double s2 = noise.sigma * noise.sigma;
  const auto regime = penalty_regime(hm);
  if (!regime) throw DomainError("equivalent_penalty_delta: hypermodel has no equivalent penalty");
  switch (*regime) {
    case PenaltyRegime::minimum_current:
      return std::sqrt(2.0 / hm.theta0) * s2;
    case PenaltyRegime::minimum_support:
      return 4.0 * (hm.beta + 1.5) * s2;
    case PenaltyRegime::lp:
      return lp_penalty_delta(lp_exponent(hm.r), hm.theta0, noise.sigma);
  }
  return 0.0;
}

}  // namespace hbloc
