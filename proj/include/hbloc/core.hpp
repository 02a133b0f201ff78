#pragma once

// Shared vocabulary types for the hbloc library: Eigen aliases, error types,
// the noise model and the coefficient-to-variance grouping.

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbloc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Input violates a mathematical precondition (nonpositive variance, r == 0, ...).
/// mu0 / (4 pi) in SI units.
inline constexpr double kMu0Over4Pi = 1e-7;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Sizes of vectors/matrices do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure inside a solver or factorization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

struct NoiseModel {
  double sigma = 1.0;

  explicit NoiseModel(double s = 1.0) : sigma(s) {
    if (!(s > 0.0)) throw DomainError("NoiseModel: sigma must be > 0");
  }
};

/// Maps every coefficient to exactly one variance component. Two orthogonal
/// dipole components at one location share a single variance, for example.
class VarianceGrouping {
 public:
  VarianceGrouping() = default;

  VarianceGrouping(std::vector<Index> group_of, Index num_groups)
      : group_of_(std::move(group_of)), sizes_(static_cast<std::size_t>(num_groups), 0) {
    for (Index g : group_of_) {
      if (g < 0 || g >= num_groups) throw DomainError("VarianceGrouping: group index out of range");
      ++sizes_[static_cast<std::size_t>(g)];
    }
    for (Index s : sizes_)
      if (s < 1) throw DomainError("VarianceGrouping: empty variance group");
  }

  /// One variance per coefficient.
  static VarianceGrouping identity(Index n) {
    std::vector<Index> g(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = i;
    return {std::move(g), n};
  }

  /// Coefficients laid out as [c_0 block | c_1 block | ...], each block of
  /// length `num_groups`; coefficient j of every block maps to group j.
  static VarianceGrouping blocked(Index num_groups, Index components) {
    std::vector<Index> g(static_cast<std::size_t>(num_groups * components));
    for (Index c = 0; c < components; ++c)
      for (Index k = 0; k < num_groups; ++k) g[static_cast<std::size_t>(c * num_groups + k)] = k;
    return {std::move(g), num_groups};
  }

  Index num_coefficients() const { return static_cast<Index>(group_of_.size()); }
  Index num_groups() const { return static_cast<Index>(sizes_.size()); }
  Index group_of(Index i) const { return group_of_[static_cast<std::size_t>(i)]; }
  Index group_size(Index k) const { return sizes_[static_cast<std::size_t>(k)]; }
  const std::vector<Index>& group_map() const { return group_of_; }

  /// Coefficient indices belonging to each group, in increasing order.
  std::vector<std::vector<Index>> members() const {
    std::vector<std::vector<Index>> m(sizes_.size());
    for (Index i = 0; i < num_coefficients(); ++i) m[static_cast<std::size_t>(group_of(i))].push_back(i);
    return m;
  }

  /// Per-group sum of squared coefficients, A_k = sum_{i in k} alpha_i^2.
  Vector group_amplitudes(const Vector& alpha) const {
    require_dims(alpha.size() == num_coefficients(), "group_amplitudes: alpha size mismatch");
    Vector a = Vector::Zero(num_groups());
    for (Index i = 0; i < alpha.size(); ++i) a[group_of(i)] += alpha[i] * alpha[i];
    return a;
  }

  /// Per-coefficient variance vector theta[group_of(i)].
  Vector expand(const Vector& theta) const {
    require_dims(theta.size() == num_groups(), "expand: theta size mismatch");
    Vector v(num_coefficients());
    for (Index i = 0; i < v.size(); ++i) v[i] = theta[group_of(i)];
    return v;
  }

 private:
  std::vector<Index> group_of_;
  std::vector<Index> sizes_;
};

struct PosteriorState {
  Vector alpha;
  Vector theta;
};

}  // namespace hbloc
