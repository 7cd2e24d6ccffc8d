#pragma once

// Offset Poisson regression by damped Newton. Used directly for the
// standard and fixed-effect models and as the regression CM/M-step inside
// every mixed-Poisson EM.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixpois/errors.hpp"
#include "mixpois/model.hpp"
#include "mixpois/numeric.hpp"

namespace mixpois {

struct PoissonOptions {
  int max_iterations = 100;
  double rel_tolerance = 1e-12;
};

struct PoissonFitResult {
  Eigen::VectorXd beta;
  double loglik = 0.0;  // sum_i [y_i x_i beta - o_i exp(x_i beta)]
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;  // no occurrences: the MLE sits at beta_0 = -inf
};

namespace detail {

inline double kernel_loglik(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& o,
                            const Eigen::VectorXd& gamma) {
  const Eigen::VectorXd eta = Z * gamma;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) acc += y(i) * eta(i) - o(i) * std::exp(eta(i));
  return acc;
}

}  // namespace detail

/// Maximizes sum_i [y_i x_i beta - o_i exp(x_i beta)] over beta by Newton
/// steps with step-halving.
inline PoissonFitResult fit_poisson(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& offsets,
                                    const Eigen::VectorXd& init, const PoissonOptions& opts = {}) {
  const Eigen::Index n = X.rows();
  const Eigen::Index h = X.cols();
  if (y.size() != n || offsets.size() != n) throw ConfigError("fit_poisson: row count mismatch");
  if (init.size() != h) throw ConfigError("fit_poisson: initial coefficient dimension mismatch");
  bool any_offset = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(offsets(i)) || offsets(i) < 0.0) throw ConfigError("fit_poisson: invalid offset");
    if (offsets(i) > 0.0) any_offset = true;
    if (offsets(i) == 0.0 && y(i) > 0.0) throw ConfigError("fit_poisson: occurrences with zero offset");
  }
  if (!any_offset) throw ConfigError("fit_poisson: no cell with positive offset");

  PoissonFitResult res;
  if (y.sum() == 0.0) {
    res.beta = Eigen::VectorXd::Zero(h);
    res.beta(0) = -std::numeric_limits<double>::infinity();
    res.loglik = 0.0;
    res.degenerate = true;
    res.converged = true;
    return res;
  }

  // Work in the orthonormal coordinates of a thin QR of X: X = Q R, beta =
  // R^{-1} gamma. Polynomial age columns are nearly collinear otherwise.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  const Eigen::MatrixXd R = qr.matrixQR().topRows(h).triangularView<Eigen::Upper>();
  const double rmax = R.diagonal().cwiseAbs().maxCoeff();
  if (!(rmax > 0.0) || R.diagonal().cwiseAbs().minCoeff() <= 1e-13 * rmax)
    throw SingularFit("fit_poisson: design matrix is rank deficient");
  const Eigen::MatrixXd Z = qr.householderQ() * Eigen::MatrixXd::Identity(n, h);
  Eigen::VectorXd gamma = R * init;
  if (!gamma.allFinite()) gamma.setZero();

  double ll = detail::kernel_loglik(Z, y, offsets, gamma);
  if (!std::isfinite(ll)) {
    gamma.setZero();
    ll = detail::kernel_loglik(Z, y, offsets, gamma);
  }
  for (int it = 1; it <= opts.max_iterations; ++it) {
    res.iterations = it;
    const Eigen::VectorXd mu = offsets.array() * (Z * gamma).array().exp();
    const Eigen::VectorXd grad = Z.transpose() * (y - mu);
    const Eigen::MatrixXd hess = Z.transpose() * mu.asDiagonal() * Z;
    const double grad_orig = (R.transpose() * grad).cwiseAbs().maxCoeff();
    if (grad_orig <= 1e-10 * (1.0 + std::abs(ll))) {
      res.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw SingularFit("fit_poisson: Hessian is not positive definite");
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) throw SingularFit("fit_poisson: non-finite Newton step");
    // Half the Newton decrement is the predicted gain; below rounding of the
    // loglik there is nothing left to do.
    if (0.5 * grad.dot(step) <= 1e-14 * (1.0 + std::abs(ll))) {
      gamma += step;
      ll = detail::kernel_loglik(Z, y, offsets, gamma);
      res.converged = true;
      break;
    }

    double t = 1.0;
    double ll_new = ll;
    Eigen::VectorXd candidate = gamma;
    for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
      candidate = gamma + t * step;
      ll_new = detail::kernel_loglik(Z, y, offsets, candidate);
      if (std::isfinite(ll_new) && ll_new >= ll) break;
    }
    if (!(std::isfinite(ll_new) && ll_new >= ll)) {
      // No ascent direction left at working precision.
      res.converged = grad_orig <= 1e-6 * (1.0 + std::abs(ll));
      break;
    }
    const double change = ll_new - ll;
    gamma = candidate;
    ll = ll_new;
    if (change <= opts.rel_tolerance * (1.0 + std::abs(ll)) && t == 1.0) {
      res.converged = true;
      break;
    }
  }
  res.beta = R.triangularView<Eigen::Upper>().solve(gamma);
  res.loglik = ll;
  return res;
}

inline Eigen::MatrixXd design_matrix(std::span<const ObservationCell> cells) {
  if (cells.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(cells.size()), cells.front().covariates.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].covariates.size() != X.cols()) throw ConfigError("ragged covariate rows");
    X.row(static_cast<Eigen::Index>(i)) = cells[i].covariates.transpose();
  }
  return X;
}

inline PoissonFitResult fit_poisson(std::span<const ObservationCell> cells, std::span<const double> offsets,
                                    const Eigen::VectorXd& init, const PoissonOptions& opts = {}) {
  if (cells.size() != offsets.size()) throw ConfigError("fit_poisson: one offset per cell required");
  if (cells.empty()) throw ConfigError("fit_poisson: no cells");
  const Eigen::MatrixXd X = design_matrix(cells);
  Eigen::VectorXd y(X.rows()), o(X.rows());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    y(static_cast<Eigen::Index>(i)) = static_cast<double>(cells[i].count);
    o(static_cast<Eigen::Index>(i)) = offsets[i];
  }
  return fit_poisson(X, y, o, init, opts);
}

/// Full Poisson loglikelihood sum_i [y log(o e^{x beta}) - o e^{x beta} - log y!].
inline double poisson_loglik(std::span<const ObservationCell> cells, std::span<const double> offsets,
                             const Eigen::VectorXd& beta) {
  double acc = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double mean = offsets[i] * std::exp(linear_predictor(cells[i], beta));
    acc += xlogy(static_cast<double>(cells[i].count), mean) - mean - log_factorial(cells[i].count);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Regression step shared by the EM algorithms: one Poisson fit per
// characteristic on the pooled cells, with per-group multipliers on the
// exposures.

/// Pooled design of a panel, built once and refitted with new per-group
/// multipliers on every EM iteration.
class PooledRegression {
 public:
  explicit PooledRegression(const PortfolioDataset& data) {
    for (auto c : kCharacteristics) {
      const auto j = index(c);
      std::vector<const ObservationCell*> rows;
      std::vector<std::size_t> owners;
      for (std::size_t g = 0; g < data.groups.size(); ++g) {
        for (const auto& cell : data.groups[g].of(c)) {
          if (cell.exposure <= 0.0) continue;
          rows.push_back(&cell);
          owners.push_back(g);
        }
      }
      if (rows.empty()) throw ConfigError("no exposure for characteristic " + std::string(name(c)));
      auto& d = designs_[j];
      d.X.resize(static_cast<Eigen::Index>(rows.size()), rows.front()->covariates.size());
      d.y.resize(d.X.rows());
      d.exposure.resize(d.X.rows());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (rows[i]->covariates.size() != d.X.cols()) throw ConfigError("ragged covariate rows");
        d.X.row(r) = rows[i]->covariates.transpose();
        d.y(r) = static_cast<double>(rows[i]->count);
        d.exposure(r) = rows[i]->exposure;
      }
      d.group = std::move(owners);
    }
  }

  Betas fit(const std::vector<std::array<double, 2>>& multipliers, const Betas& init,
            const PoissonOptions& opts = {}) const {
    Betas out;
    for (auto c : kCharacteristics) {
      const auto j = index(c);
      const auto& d = designs_[j];
      Eigen::VectorXd offsets(d.X.rows());
      for (Eigen::Index r = 0; r < d.X.rows(); ++r)
        offsets(r) = d.exposure(r) * multipliers[d.group[static_cast<std::size_t>(r)]][j];
      auto res = fit_poisson(d.X, d.y, offsets, init[j], opts);
      if (res.degenerate) throw SingularFit("no occurrences for characteristic " + std::string(name(c)));
      out[j] = res.beta;
    }
    return out;
  }

 private:
  struct Design {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd exposure;
    std::vector<std::size_t> group;
  };
  std::array<Design, 2> designs_;
};

inline Betas fit_regressions(const PortfolioDataset& data, const std::vector<std::array<double, 2>>& multipliers,
                             const Betas& init, const PoissonOptions& opts = {}) {
  return PooledRegression(data).fit(multipliers, init, opts);
}

/// Starting coefficients: intercept at the crude log rate, slopes zero.
inline Betas crude_betas(const PortfolioDataset& data) {
  Betas b;
  for (auto c : kCharacteristics) {
    double y = 0.0, e = 0.0;
    Eigen::Index width = basis_degree(c) + 1;
    for (const auto& g : data.groups)
      for (const auto& cell : g.of(c)) {
        y += static_cast<double>(cell.count);
        e += cell.exposure;
        width = cell.covariates.size();
      }
    b[index(c)] = Eigen::VectorXd::Zero(width);
    if (y > 0.0 && e > 0.0) b[index(c)](0) = std::log(y / e);
  }
  return b;
}

/// Poisson loglik of the whole panel given per-group multipliers theta.
inline double panel_poisson_loglik(const PortfolioDataset& data, const Betas& betas,
                                   const std::vector<GroupPosterior>& effects) {
  double acc = 0.0;
  for (std::size_t g = 0; g < data.groups.size(); ++g) {
    for (auto c : kCharacteristics) {
      const auto j = index(c);
      for (const auto& cell : data.groups[g].of(c)) {
        const double mean = effects[g].theta[j] * cell.exposure * std::exp(linear_predictor(cell, betas[j]));
        acc += xlogy(static_cast<double>(cell.count), mean) - mean - log_factorial(cell.count);
      }
    }
  }
  return acc;
}

/// Model without group effects.
inline MixedPoissonFit fit_standard_model(const PortfolioDataset& data, const PoissonOptions& opts = {}) {
  MixedPoissonFit fit;
  fit.model = "standard";
  fit.prior = NoEffects{};
  const std::vector<std::array<double, 2>> ones(data.groups.size(), {1.0, 1.0});
  fit.betas = fit_regressions(data, ones, crude_betas(data), opts);
  for (const auto& g : data.groups) fit.group_posteriors.push_back({g.group_id, {1.0, 1.0}});
  fit.loglik = panel_poisson_loglik(data, fit.betas, fit.group_posteriors);
  fit.loglik_trace = {fit.loglik};
  fit.iterations = 1;
  fit.converged = true;
  return fit;
}

/// Group effects as fixed effects: per characteristic, one Poisson fit with
/// the polynomial slopes plus one indicator per group. Groups without
/// occurrences have an MLE at -inf and get effect exactly 0. The intercept
/// is set so that sum_g e_g theta_g = sum_g e_g over all groups.
inline MixedPoissonFit fit_fixed_effects_model(const PortfolioDataset& data, const PoissonOptions& opts = {}) {
  MixedPoissonFit fit;
  fit.model = "fixed";
  fit.prior = FixedEffects{};
  const std::size_t G = data.groups.size();
  for (const auto& g : data.groups) fit.group_posteriors.push_back({g.group_id, {0.0, 0.0}});

  for (auto c : kCharacteristics) {
    const auto j = index(c);
    const int slopes = basis_degree(c);
    std::vector<std::size_t> included;
    std::vector<std::int64_t> totals(G, 0);
    for (std::size_t g = 0; g < G; ++g) {
      for (const auto& cell : data.groups[g].of(c)) totals[g] += cell.count;
      if (totals[g] > 0) included.push_back(g);
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(slopes + 1);
    if (included.empty()) {
      fit.betas[j] = beta;
      continue;
    }
    std::vector<Eigen::Index> column_of(G, -1);
    for (std::size_t k = 0; k < included.size(); ++k) column_of[included[k]] = slopes + static_cast<Eigen::Index>(k);

    Eigen::Index rows = 0;
    for (auto g : included)
      for (const auto& cell : data.groups[g].of(c))
        if (cell.exposure > 0.0) ++rows;
    const Eigen::Index cols = slopes + static_cast<Eigen::Index>(included.size());
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(rows, cols);
    Eigen::VectorXd y(rows), o(rows);
    Eigen::Index r = 0;
    for (auto g : included) {
      for (const auto& cell : data.groups[g].of(c)) {
        if (cell.exposure <= 0.0) continue;
        X.row(r).head(slopes) = cell.covariates.tail(slopes).transpose();
        X(r, column_of[g]) = 1.0;
        y(r) = static_cast<double>(cell.count);
        o(r) = cell.exposure;
        ++r;
      }
    }
    Eigen::VectorXd init = Eigen::VectorXd::Zero(cols);
    for (auto g : included) {
      double e = 0.0;
      for (const auto& cell : data.groups[g].of(c)) e += cell.exposure;
      init(column_of[g]) = std::log(static_cast<double>(totals[g]) / e);
    }
    const auto res = fit_poisson(X, y, o, init, opts);

    Eigen::VectorXd slope_only = Eigen::VectorXd::Zero(slopes + 1);
    slope_only.tail(slopes) = res.beta.head(slopes);
    double weighted = 0.0, total = 0.0;
    std::vector<double> raw(G, 0.0);
    for (std::size_t g = 0; g < G; ++g) {
      double e = 0.0;
      for (const auto& cell : data.groups[g].of(c)) e += cell.exposure * std::exp(linear_predictor(cell, slope_only));
      total += e;
      if (column_of[g] >= 0) {
        raw[g] = std::exp(res.beta(column_of[g]));
        weighted += raw[g] * e;
      }
    }
    const double intercept = std::log(weighted / total);
    beta = slope_only;
    beta(0) = intercept;
    fit.betas[j] = beta;
    for (std::size_t g = 0; g < G; ++g) fit.group_posteriors[g].theta[j] = raw[g] * std::exp(-intercept);
    fit.iterations = std::max(fit.iterations, res.iterations);
  }
  fit.loglik = panel_poisson_loglik(data, fit.betas, fit.group_posteriors);
  fit.loglik_trace = {fit.loglik};
  fit.converged = true;
  return fit;
}

}  // namespace mixpois
