#pragma once

// Gibbs sampler over a region of interest (ROI). Coefficients outside the ROI
// are held at fixed values; inside, alpha is drawn as a block from its
// conditional Gaussian and every variance component is drawn in turn from its
// one-dimensional conditional by inverse-CDF sampling on a log grid.

#include "hbloc/hypermodel.hpp"
#include "hbloc/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

namespace hbloc {

using Rng = std::mt19937_64;

struct RoiSpec {
  /// Variance groups that are sampled.
  std::vector<Index> roi_indices;
  /// Fixed coefficients of the complement, in increasing coefficient order. Empty means zero.
  Vector outside_alpha;
  /// Fixed variances of the complement groups, in increasing group order. Empty means theta0.
  Vector outside_theta;
};

/// Dense problem restricted to the ROI, assembled once per chain.
class RoiProblem {
 public:
  RoiProblem(const Matrix& M, const Vector& b, const NoiseModel& noise, const VarianceGrouping& grouping,
             const RoiSpec& roi)
      : sigma_(noise.sigma), roi_groups_(roi.roi_indices) {
    require_dims(M.cols() == grouping.num_coefficients() && M.rows() == b.size(),
                 "RoiProblem: lead field does not match data/grouping");
    if (roi_groups_.empty()) throw DomainError("RoiSpec: empty ROI");
    std::vector<Index> local(static_cast<std::size_t>(grouping.num_groups()), -1);
    for (std::size_t j = 0; j < roi_groups_.size(); ++j) {
      const Index g = roi_groups_[j];
      if (g < 0 || g >= grouping.num_groups()) throw DomainError("RoiSpec: group index out of range");
      if (local[static_cast<std::size_t>(g)] >= 0) throw DomainError("RoiSpec: duplicate group index");
      local[static_cast<std::size_t>(g)] = static_cast<Index>(j);
    }
    std::vector<Index> local_group_of;
    for (Index i = 0; i < grouping.num_coefficients(); ++i) {
      const Index lg = local[static_cast<std::size_t>(grouping.group_of(i))];
      if (lg >= 0) {
        coeffs_.push_back(i);
        local_group_of.push_back(lg);
      } else {
        outside_coeffs_.push_back(i);
      }
    }
    local_ = VarianceGrouping(std::move(local_group_of), static_cast<Index>(roi_groups_.size()));
    const Index n_out_groups = grouping.num_groups() - static_cast<Index>(roi_groups_.size());
    if (roi.outside_alpha.size() != 0)
      require_dims(roi.outside_alpha.size() == static_cast<Index>(outside_coeffs_.size()),
                   "RoiSpec: outside_alpha must match the complement size");
    if (roi.outside_theta.size() != 0) {
      require_dims(roi.outside_theta.size() == n_out_groups, "RoiSpec: outside_theta must match the complement size");
      for (Index k = 0; k < roi.outside_theta.size(); ++k)
        if (!(roi.outside_theta[k] > 0.0)) throw DomainError("RoiSpec: outside_theta must be > 0");
    }

    A_.resize(M.rows(), static_cast<Index>(coeffs_.size()));
    for (std::size_t j = 0; j < coeffs_.size(); ++j) A_.col(static_cast<Index>(j)) = M.col(coeffs_[j]) / sigma_;
    Vector r = b;
    if (roi.outside_alpha.size() != 0)
      for (std::size_t j = 0; j < outside_coeffs_.size(); ++j) r -= M.col(outside_coeffs_[j]) * roi.outside_alpha[static_cast<Index>(j)];
    y_ = r / sigma_;
  }

  /// Whitened ROI lead field sigma^-1 M_ROI and data sigma^-1 (b - M_0 alpha_0).
  const Matrix& A() const { return A_; }
  const Vector& y() const { return y_; }
  double sigma() const { return sigma_; }
  const VarianceGrouping& grouping() const { return local_; }
  const std::vector<Index>& coefficients() const { return coeffs_; }
  const std::vector<Index>& groups() const { return roi_groups_; }
  Index num_coefficients() const { return static_cast<Index>(coeffs_.size()); }
  Index num_groups() const { return static_cast<Index>(roi_groups_.size()); }

 private:
  double sigma_;
  std::vector<Index> roi_groups_;
  std::vector<Index> coeffs_, outside_coeffs_;
  VarianceGrouping local_;
  Matrix A_;
  Vector y_;
};

inline Vector standard_normal(Rng& rng, Index n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

/// Least squares solution of the perturbed stacked system
///   [A; D^-1/2] alpha = [y + w1; w2],  w ~ N(0, I),
/// i.e. a draw from N(P^-1 A^T y, P^-1) with P = A^T A + D^-1. With
/// perturb = false the noise is zero and the result is the conditional mean.
inline Vector draw_alpha_conditional(const Vector& theta_roi, const RoiProblem& prob, Rng& rng, bool perturb = true) {
  require_dims(theta_roi.size() == prob.num_groups(), "draw_alpha_conditional: theta size mismatch");
  for (Index k = 0; k < theta_roi.size(); ++k)
    if (!(theta_roi[k] > 0.0)) throw DomainError("draw_alpha_conditional: theta must be > 0");
  const Index L = prob.A().rows(), n = prob.num_coefficients();
  const Vector dsqrt = prob.grouping().expand(theta_roi).cwiseSqrt();
  Vector w1 = Vector::Zero(L), w2 = Vector::Zero(n);
  if (perturb) {
    w1 = standard_normal(rng, L);
    w2 = standard_normal(rng, n);
  }
  // Whitened variable z = D^-1/2 alpha solves (K^T K + I) z = K^T (y + w1) + w2 with K = A D^1/2.
  const Matrix K = prob.A() * dsqrt.asDiagonal();
  const Vector rhs_y = prob.y() + w1;
  Vector z;
  if (L <= n) {
    Matrix S = Matrix::Identity(L, L);
    S.selfadjointView<Eigen::Lower>().rankUpdate(K);
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalError("draw_alpha_conditional: factorization failed");
    z = K.transpose() * llt.solve(rhs_y - K * w2) + w2;
  } else {
    Matrix S = Matrix::Identity(n, n);
    S.selfadjointView<Eigen::Lower>().rankUpdate(K.transpose());
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalError("draw_alpha_conditional: factorization failed");
    z = llt.solve(K.transpose() * rhs_y + w2);
  }
  return dsqrt.cwiseProduct(z);
}

/// Convenience form taking the full problem; assembles the ROI problem on every call.
inline Vector draw_alpha_conditional(const Vector& theta_roi, const RoiSpec& roi, const Matrix& M, const Vector& b,
                                     const NoiseModel& noise, const VarianceGrouping& grouping, Rng& rng,
                                     bool perturb = true) {
  return draw_alpha_conditional(theta_roi, RoiProblem(M, b, noise, grouping, roi), rng, perturb);
}

struct ThetaGridConfig {
  int nodes = 2048;
  /// Maximal half-width of the grid in decades.
  double max_half_decades = 8.0;
  /// Grid half-width in units of the local standard deviation of log theta.
  double widths = 40.0;
  int max_widenings = 3;
};

/// Inverse-CDF draw from pi(theta) ~ exp(-A/(2 theta) - (theta/theta0)^r + c log theta).
///
/// The density is tabulated in u = log theta (Jacobian included) on a uniform
/// grid centred at the conditional mode, whose half-width is the smaller of
/// max_half_decades and `widths` local standard deviations. The CDF is the
/// trapezoid rule and the inverse interpolates linearly between nodes.
inline double draw_theta_component(double amplitude, const HyperModel& hm, Index group_size, Rng& rng,
                                   const ThetaGridConfig& grid = {}) {
  detail::check_amplitude(amplitude);
  const double c = log_theta_coefficient(hm, group_size) + 1.0;  // Jacobian d theta = theta du
  const double log_t0 = std::log(hm.theta0);
  const double uc = std::log(update_theta_gengamma(amplitude, hm, group_size).theta);
  // Curvature of the log density in u at the centre.
  const double curv = 0.5 * amplitude * std::exp(-uc) + hm.r * hm.r * std::exp(hm.r * (uc - log_t0));
  const double width = 1.0 / std::sqrt(std::max(curv, 1e-300));
  double half = std::min(grid.max_half_decades * std::numbers::ln10, grid.widths * width + width * width);

  const int n = std::max(grid.nodes, 2);
  std::vector<double> logp(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n)), cdf(static_cast<std::size_t>(n));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double target = unif(rng);
  constexpr int kRestart = 64;  // exact exponentials every kRestart nodes bound recurrence drift
  for (int attempt = 0; attempt <= grid.max_widenings; ++attempt) {
    const double lo = uc - half, h = 2.0 * half / (n - 1);
    const double qa = std::exp(-h), qr = std::exp(hm.r * h);
    double ea = 0.0, er = 0.0, top = -INFINITY;
    for (int j = 0; j < n; ++j) {
      const double u = lo + j * h;
      if (j % kRestart == 0) {
        ea = std::exp(-u);
        er = std::exp(hm.r * (u - log_t0));
      } else {
        ea *= qa;
        er *= qr;
      }
      const double v = -0.5 * amplitude * ea - er + c * u;
      logp[static_cast<std::size_t>(j)] = v;
      top = std::max(top, v);
    }
    double total = 0.0;
    if (std::isfinite(top)) {
      for (int j = 0; j < n; ++j) {
        const double d = logp[static_cast<std::size_t>(j)] - top;
        w[static_cast<std::size_t>(j)] = d > -700.0 ? std::exp(d) : 0.0;
      }
      cdf[0] = 0.0;
      for (int j = 1; j < n; ++j)
        cdf[static_cast<std::size_t>(j)] =
            cdf[static_cast<std::size_t>(j) - 1] + 0.5 * h * (w[static_cast<std::size_t>(j) - 1] + w[static_cast<std::size_t>(j)]);
      total = cdf.back();
    }
    const bool edge_mass = std::isfinite(top) && (w.front() > 1e-14 || w.back() > 1e-14);
    if (!(total > 0.0) || !std::isfinite(total) || (edge_mass && attempt < grid.max_widenings)) {
      half *= 2.0;
      continue;
    }
    const double t = target * total;
    const int j = std::clamp(static_cast<int>(std::upper_bound(cdf.begin(), cdf.end(), t) - cdf.begin()), 1, n - 1);
    const double span = cdf[static_cast<std::size_t>(j)] - cdf[static_cast<std::size_t>(j) - 1];
    const double frac = span > 0.0 ? (t - cdf[static_cast<std::size_t>(j) - 1]) / span : 0.5;
    return std::exp(lo + (j - 1 + frac) * h);
  }
  throw NumericalError("draw_theta_component: density mass underflow on every grid");
}

struct ChainConfig {
  int sample_size = 1000;
  std::uint64_t seed = 0;
  int thinning = 1;
  /// Initial ROI variances; empty means theta0, size 1 means that constant.
  Vector init_theta;
  /// Leading draws excluded from the streaming summary.
  int discard = 0;
  bool store_alpha = true;
  bool store_theta = true;
  ThetaGridConfig grid;

  void validate() const {
    if (sample_size < 1) throw DomainError("ChainConfig: sample_size must be >= 1");
    if (thinning < 1) throw DomainError("ChainConfig: thinning must be >= 1");
    if (discard < 0 || discard >= sample_size) throw DomainError("ChainConfig: discard must be in [0, sample_size)");
    for (Index k = 0; k < init_theta.size(); ++k)
      if (!(init_theta[k] > 0.0)) throw DomainError("ChainConfig: init_theta must be > 0");
  }
};

/// Stored draws over the ROI. Sample s is Gibbs iteration iteration[s] (1-based).
struct Chain {
  std::vector<Vector> alpha;
  std::vector<Vector> theta;
  std::vector<int> iteration;
  /// Coefficient-to-group map inside the ROI.
  VarianceGrouping grouping;

  std::size_t size() const { return iteration.size(); }
};

struct ChainSummary {
  Vector alpha_cm;
  Vector theta_cm;
  /// Per ROI group: (1/M) sum_i sum_{j in k} (alpha_j^i - alpha_cm_j)^2.
  Vector amplitude_variance;
  Index samples = 0;
};

/// Streaming means and centred second moments (Welford).
class ChainAccumulator {
 public:
  explicit ChainAccumulator(const VarianceGrouping& g)
      : g_(g), mean_a_(Vector::Zero(g.num_coefficients())), m2_a_(Vector::Zero(g.num_coefficients())),
        mean_t_(Vector::Zero(g.num_groups())) {}

  void add(const Vector& alpha, const Vector& theta) {
    ++n_;
    const double inv = 1.0 / static_cast<double>(n_);
    const Vector d = alpha - mean_a_;
    mean_a_ += d * inv;
    m2_a_ += d.cwiseProduct(alpha - mean_a_);
    mean_t_ += (theta - mean_t_) * inv;
  }

  ChainSummary summary() const {
    if (n_ == 0) throw DomainError("ChainAccumulator: no samples");
    ChainSummary s;
    s.alpha_cm = mean_a_;
    s.theta_cm = mean_t_;
    s.amplitude_variance = Vector::Zero(g_.num_groups());
    for (Index i = 0; i < m2_a_.size(); ++i) s.amplitude_variance[g_.group_of(i)] += m2_a_[i];
    s.amplitude_variance /= static_cast<double>(n_);
    s.samples = n_;
    return s;
  }

 private:
  VarianceGrouping g_;
  Index n_ = 0;
  Vector mean_a_, m2_a_, mean_t_;
};

/// Two-pass summary over the stored draws, skipping the first `discard` of them.
inline ChainSummary summarize_chain(const Chain& chain, std::size_t discard = 0) {
  if (chain.alpha.size() <= discard || chain.theta.size() <= discard)
    throw DomainError("summarize_chain: empty chain");
  const std::size_t n = chain.alpha.size() - discard;
  ChainSummary s;
  s.alpha_cm = Vector::Zero(chain.alpha[discard].size());
  s.theta_cm = Vector::Zero(chain.theta[discard].size());
  for (std::size_t i = discard; i < chain.alpha.size(); ++i) {
    s.alpha_cm += chain.alpha[i];
    s.theta_cm += chain.theta[i];
  }
  s.alpha_cm /= static_cast<double>(n);
  s.theta_cm /= static_cast<double>(n);
  Vector sq = Vector::Zero(s.alpha_cm.size());
  for (std::size_t i = discard; i < chain.alpha.size(); ++i) sq += (chain.alpha[i] - s.alpha_cm).cwiseAbs2();
  s.amplitude_variance = Vector::Zero(chain.grouping.num_groups());
  for (Index i = 0; i < sq.size(); ++i) s.amplitude_variance[chain.grouping.group_of(i)] += sq[i];
  s.amplitude_variance /= static_cast<double>(n);
  s.samples = static_cast<Index>(n);
  return s;
}

struct ChainResult {
  Chain chain;
  ChainSummary summary;
  /// ROI coefficient and group indices into the full problem.
  std::vector<Index> coefficients;
  std::vector<Index> groups;
};

inline ChainResult sample_roi(const Matrix& M, const Vector& b, const NoiseModel& noise, const HyperModel& hm,
                              const VarianceGrouping& grouping, const RoiSpec& roi, const ChainConfig& cfg) {
  cfg.validate();
  hm.validate();
  const RoiProblem prob(M, b, noise, grouping, roi);
  const VarianceGrouping& g = prob.grouping();
  const Index K = prob.num_groups();

  Vector theta;
  if (cfg.init_theta.size() == 0)
    theta = Vector::Constant(K, hm.theta0);
  else if (cfg.init_theta.size() == 1)
    theta = Vector::Constant(K, cfg.init_theta[0]);
  else {
    require_dims(cfg.init_theta.size() == K, "sample_roi: init_theta size mismatch");
    theta = cfg.init_theta;
  }

  Rng rng(cfg.seed);
  ChainResult out;
  out.chain.grouping = g;
  out.coefficients = prob.coefficients();
  out.groups = prob.groups();
  ChainAccumulator acc(g);
  for (int it = 1; it <= cfg.sample_size; ++it) {
    const Vector alpha = draw_alpha_conditional(theta, prob, rng);
    const Vector amps = g.group_amplitudes(alpha);
    for (Index k = 0; k < K; ++k) theta[k] = draw_theta_component(amps[k], hm, g.group_size(k), rng, cfg.grid);
    if (it > cfg.discard) acc.add(alpha, theta);
    if (it % cfg.thinning == 0) {
      out.chain.iteration.push_back(it);
      if (cfg.store_alpha) out.chain.alpha.push_back(alpha);
      if (cfg.store_theta) out.chain.theta.push_back(theta);
    }
  }
  out.summary = acc.summary();
  return out;
}

// ---- export -----------------------------------------------------------------

/// Long-format CSV: iteration, component, value.
inline void write_chain_csv(const std::filesystem::path& path, const std::vector<Vector>& draws,
                            const std::vector<int>& iteration) {
  require_dims(draws.size() == iteration.size(), "write_chain_csv: draws/iteration mismatch");
  auto f = detail::open_out(path);
  f << std::setprecision(std::numeric_limits<double>::max_digits10);
  f << "iteration,component,value\n";
  for (std::size_t s = 0; s < draws.size(); ++s)
    for (Index j = 0; j < draws[s].size(); ++j) f << iteration[s] << ',' << j << ',' << draws[s][j] << '\n';
  if (!f) throw FileError("write failed: " + path.string());
}

/// Binary matrix with one row per stored draw and one column per component.
inline void write_chain_binary(const std::filesystem::path& path, const std::vector<Vector>& draws,
                               const std::vector<int>& iteration, const std::vector<Index>& component_ids,
                               const std::string& quantity) {
  const Index rows = static_cast<Index>(draws.size());
  const Index cols = rows ? draws[0].size() : static_cast<Index>(component_ids.size());
  Matrix m(rows, cols);
  for (Index s = 0; s < rows; ++s) m.row(s) = draws[static_cast<std::size_t>(s)].transpose();
  nlohmann::json h;
  h["quantity"] = quantity;
  h["row_ids"] = iteration;
  h["row_meaning"] = "gibbs iteration";
  h["col_ids"] = component_ids;
  write_matrix_binary(path, m, h);
}

inline nlohmann::json summary_json(const ChainSummary& s, const std::vector<Index>& groups) {
  return {{"samples", s.samples},
          {"groups", groups},
          {"alpha_cm", to_std(s.alpha_cm)},
          {"theta_cm", to_std(s.theta_cm)},
          {"amplitude_variance", to_std(s.amplitude_variance)}};
}

}  // namespace hbloc
