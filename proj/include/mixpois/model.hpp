#pragma once

// Domain types shared by every estimator: panels of occurrence/exposure
// cells per group, log-linear rate bases and the fitted-model record.

#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mixpois/errors.hpp"
#include "mixpois/numeric.hpp"

namespace mixpois {

/// Transition characteristics carrying a group effect: disability (a->i)
/// and recovery (i->a).
enum class Characteristic : int { ai = 0, ia = 1 };

inline constexpr std::size_t kNumCharacteristics = 2;
inline constexpr std::array<Characteristic, 2> kCharacteristics{Characteristic::ai, Characteristic::ia};

inline constexpr std::size_t index(Characteristic c) { return static_cast<std::size_t>(c); }

inline constexpr std::string_view name(Characteristic c) { return c == Characteristic::ai ? "ai" : "ia"; }

inline Characteristic parse_characteristic(std::string_view s) {
  if (s == "ai") return Characteristic::ai;
  if (s == "ia") return Characteristic::ia;
  throw DataError("unknown characteristic '" + std::string(s) + "'");
}

/// Polynomial degree of the baseline log-rate: quadratic for disability,
/// linear for recovery.
inline constexpr int basis_degree(Characteristic c) { return c == Characteristic::ai ? 2 : 1; }

/// Where inside an age interval (t_{k-1}, t_k] the covariates are evaluated.
enum class CovariateAnchor { right_endpoint, midpoint };

using CovariateRow = Eigen::VectorXd;

/// Polynomial covariate row (1, t, ..., t^degree).
inline CovariateRow polynomial_row(int degree, double t) {
  CovariateRow row(degree + 1);
  double p = 1.0;
  for (int m = 0; m <= degree; ++m) {
    row(m) = p;
    p *= t;
  }
  return row;
}

inline CovariateRow basis_row(Characteristic c, double t) { return polynomial_row(basis_degree(c), t); }

struct ObservationCell {
  int interval = 0;
  double t_right = 0.0;
  double exposure = 0.0;  // person-years E_ij
  std::int64_t count = 0;  // occurrences y_ij
  CovariateRow covariates;
};

struct GroupObservations {
  std::string group_id;
  std::array<std::vector<ObservationCell>, 2> cells;

  const std::vector<ObservationCell>& of(Characteristic c) const { return cells[index(c)]; }
  std::vector<ObservationCell>& of(Characteristic c) { return cells[index(c)]; }
};

struct PortfolioDataset {
  std::vector<GroupObservations> groups;
  std::vector<double> grid;  // age grid t_0 < ... < t_K

  void validate() const {
    for (std::size_t k = 1; k < grid.size(); ++k)
      if (!(grid[k] > grid[k - 1])) throw DataError("age grid must be strictly increasing");
    std::set<std::string> ids;
    for (const auto& g : groups) {
      if (!ids.insert(g.group_id).second) throw DataError("duplicate group id '" + g.group_id + "'");
      for (auto c : kCharacteristics) {
        for (const auto& cell : g.of(c)) {
          if (!(cell.exposure >= 0.0) || !std::isfinite(cell.exposure))
            throw DataError("negative or non-finite exposure in group " + g.group_id);
          if (cell.count < 0) throw DataError("negative count in group " + g.group_id);
          if (cell.exposure == 0.0 && cell.count != 0)
            throw DataError("occurrences without exposure in group " + g.group_id);
          if (!cell.covariates.allFinite()) throw DataError("non-finite covariate in group " + g.group_id);
        }
      }
    }
  }
};

using Betas = std::array<Eigen::VectorXd, 2>;

/// Log-linear baseline rate mu(t; beta) = exp(sum_m beta_m t^m).
struct RateBasis {
  Eigen::VectorXd beta;

  int degree() const { return static_cast<int>(beta.size()) - 1; }
};

inline double evaluate_rate(const RateBasis& basis, double t) {
  // Horner on the exponent.
  double acc = 0.0;
  for (Eigen::Index m = basis.beta.size() - 1; m >= 0; --m) acc = acc * t + basis.beta(m);
  return std::exp(acc);
}

/// Coefficients of the simulated baselines.
inline Betas true_betas() {
  Betas b;
  b[0] = Eigen::Vector3d(-4.5, -0.018, 0.00064);
  b[1] = Eigen::Vector2d(0.3, -0.049);
  return b;
}

/// Per-group sufficient sums e_{.j} = sum_i E_ij exp(x_ij beta_j) and
/// y_{.j} = sum_i y_ij.
struct GroupSums {
  std::array<double, 2> e{0.0, 0.0};
  std::array<std::int64_t, 2> y{0, 0};
};

inline double linear_predictor(const ObservationCell& cell, const Eigen::VectorXd& beta) {
  if (cell.covariates.size() != beta.size())
    throw ConfigError("covariate dimension " + std::to_string(cell.covariates.size()) +
                      " does not match coefficient dimension " + std::to_string(beta.size()));
  return cell.covariates.dot(beta);
}

inline GroupSums weighted_exposure_sums(const GroupObservations& g, const Betas& betas) {
  GroupSums s;
  for (auto c : kCharacteristics) {
    const auto j = index(c);
    for (const auto& cell : g.of(c)) {
      const double eta = linear_predictor(cell, betas[j]);
      s.e[j] += cell.exposure * std::exp(eta);
      s.y[j] += cell.count;
    }
  }
  return s;
}

/// sum_ij [ y_ij log e_ij - log y_ij! ], the part of every mixed-Poisson
/// loglikelihood that does not involve the mixing distribution.
inline double log_prefactor(const GroupObservations& g, const Betas& betas) {
  double acc = 0.0;
  for (auto c : kCharacteristics) {
    const auto j = index(c);
    for (const auto& cell : g.of(c)) {
      if (cell.count == 0) continue;
      const double eta = linear_predictor(cell, betas[j]);
      acc += static_cast<double>(cell.count) * (std::log(cell.exposure) + eta) - log_factorial(cell.count);
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Mixing-prior parameter records.

/// Independent Gamma(1/psi, 1/psi) priors, one per characteristic.
struct GammaPrior {
  std::array<double, 2> psi{1.0, 1.0};
};

/// Hierarchical Gamma prior: Theta_0 ~ Gamma(shape eta, rate nu) and
/// Theta_j | Theta_0 ~ Gamma(Theta_0, eta/nu).
struct HierPrior {
  double eta = 1.0;
  double nu = 1.0;

  double delta() const { return eta / nu; }
  double variance() const { return (nu + 1.0) / eta; }
  double correlation() const { return 1.0 / (1.0 + nu); }
};

/// Feed-forward bivariate phase-type law with density
/// eta exp(T11 x) T12 exp(T22 y) (-T22) 1.
struct BivariatePH {
  Eigen::RowVectorXd eta;
  Eigen::MatrixXd T11;
  Eigen::MatrixXd T12;
  Eigen::MatrixXd T22;

  Eigen::Index p1() const { return T11.rows(); }
  Eigen::Index p2() const { return T22.rows(); }
  Eigen::VectorXd exit2() const { return -(T22.rowwise().sum()); }
};

/// Fixed-effect model: one multiplicative effect per group and characteristic.
struct FixedEffects {};

/// Standard model: no group effects.
struct NoEffects {};

using PriorParams = std::variant<NoEffects, FixedEffects, GammaPrior, HierPrior, BivariatePH>;

struct GroupPosterior {
  std::string group_id;
  std::array<double, 2> theta{1.0, 1.0};  // posterior means (ai, ia)
};

struct MixedPoissonFit {
  std::string model;
  Betas betas;
  PriorParams prior;
  std::vector<GroupPosterior> group_posteriors;
  double loglik = kNegInf;
  int iterations = 0;
  bool converged = false;
  std::vector<double> loglik_trace;
  std::uint64_t seed = 0;
  std::vector<std::string> diagnostics;
};

}  // namespace mixpois
