#pragma once

// Independent Gamma mixing ("simple" model): each characteristic carries
// its own Gamma(1/psi, 1/psi) effect, so every margin is multivariate
// negative binomial and the posterior is conjugate.

#include <cmath>
#include <vector>

#include "mixpois/glm.hpp"
#include "mixpois/model.hpp"
#include "mixpois/numeric.hpp"

namespace mixpois {

struct GammaPosterior {
  double shape = 1.0;
  double rate = 1.0;
  double mean() const { return shape / rate; }
  double mean_log() const { return digamma(shape) - std::log(rate); }
};

inline GammaPosterior posterior_gamma(std::int64_t y_bullet, double e_bullet, double gamma_j) {
  if (y_bullet < 0 || e_bullet < 0.0 || !(gamma_j > 0.0)) throw ParameterError("posterior_gamma: invalid arguments");
  const double alpha = 1.0 / gamma_j;
  return {static_cast<double>(y_bullet) + alpha, e_bullet + alpha};
}

/// log of Gamma(y+a) a^a / (Gamma(a) (a+e)^(y+a)), the mixing factor of one
/// characteristic of one group.
inline double log_negbin_factor(std::int64_t y, double e, double psi) {
  const double a = 1.0 / psi;
  if (a > 1e4) {
    // lgamma differences cancel badly here; sum the rising factorial instead.
    double acc = -a * std::log1p(e / a);
    for (std::int64_t k = 0; k < y; ++k) acc += std::log1p((static_cast<double>(k) - e) / (a + e));
    return acc;
  }
  const double yd = static_cast<double>(y);
  return std::lgamma(yd + a) - std::lgamma(a) + a * std::log(a) - (yd + a) * std::log(a + e);
}

inline double loglik_independent_gamma(const PortfolioDataset& data, const Betas& betas, const GammaPrior& prior) {
  double acc = 0.0;
  for (const auto& g : data.groups) {
    const auto s = weighted_exposure_sums(g, betas);
    acc += log_prefactor(g, betas);
    for (std::size_t j = 0; j < 2; ++j) acc += log_negbin_factor(s.y[j], s.e[j], prior.psi[j]);
  }
  return acc;
}

struct EmOptions {
  int max_iterations = 500;
  double rel_tolerance = 1e-9;
  PoissonOptions glm{};
};

namespace detail {

/// Solves log(a) - digamma(a) = c for a > 0 (the Gamma shape M-step).
inline double solve_gamma_shape(double c) {
  constexpr double kMaxShape = 1e8;
  if (!(c > 0.0)) return kMaxShape;
  // log a - psi(a) ~ 1/(2a) for large a, ~ 1/a for small a.
  double u = std::log(0.5 / c);
  for (int it = 0; it < 100; ++it) {
    const double a = std::exp(u);
    const double f = std::log(a) - digamma(a) - c;
    const double df = 1.0 - a * trigamma(a);  // d/du of log a - psi(a)
    if (df >= 0.0) break;
    const double step = f / df;
    u -= std::clamp(step, -5.0, 5.0);
    if (std::abs(step) < 1e-14) break;
  }
  return std::min(std::exp(u), kMaxShape);
}

}  // namespace detail

/// EM for the independent-Gamma mixed Poisson regression. The regression
/// step refits both Poisson GLMs with offsets E(Theta_j|y) E_ij; the psi step
/// maximizes the expected Gamma log-density exactly.
inline MixedPoissonFit em_fit_independent_gamma(const PortfolioDataset& data, const EmOptions& opts = {},
                                                const Betas* init = nullptr, GammaPrior prior = {}) {
  const std::size_t G = data.groups.size();
  if (G == 0) throw ConfigError("em_fit_independent_gamma: empty panel");
  const PooledRegression regression(data);
  MixedPoissonFit fit;
  fit.model = "simple";
  fit.betas = init ? *init : fit_standard_model(data, opts.glm).betas;

  double ll = loglik_independent_gamma(data, fit.betas, prior);
  fit.loglik_trace.push_back(ll);
  std::vector<std::array<double, 2>> post_mean(G);
  std::array<double, 2> sum_mean{}, sum_log{};
  for (int it = 1; it <= opts.max_iterations; ++it) {
    sum_mean = {0.0, 0.0};
    sum_log = {0.0, 0.0};
    for (std::size_t g = 0; g < G; ++g) {
      const auto s = weighted_exposure_sums(data.groups[g], fit.betas);
      for (std::size_t j = 0; j < 2; ++j) {
        const auto post = posterior_gamma(s.y[j], s.e[j], prior.psi[j]);
        post_mean[g][j] = post.mean();
        sum_mean[j] += post.mean();
        sum_log[j] += post.mean_log();
      }
    }
    fit.betas = regression.fit(post_mean, fit.betas, opts.glm);
    for (std::size_t j = 0; j < 2; ++j) {
      const double c = (sum_mean[j] - sum_log[j]) / static_cast<double>(G) - 1.0;
      prior.psi[j] = 1.0 / detail::solve_gamma_shape(c);
    }
    const double ll_new = loglik_independent_gamma(data, fit.betas, prior);
    fit.loglik_trace.push_back(ll_new);
    fit.iterations = it;
    const double change = ll_new - ll;
    ll = ll_new;
    if (std::abs(change) <= opts.rel_tolerance * std::abs(ll)) {
      fit.converged = true;
      break;
    }
  }
  fit.prior = prior;
  fit.loglik = ll;
  for (const auto& g : data.groups) {
    const auto s = weighted_exposure_sums(g, fit.betas);
    GroupPosterior gp{g.group_id, {}};
    for (std::size_t j = 0; j < 2; ++j) gp.theta[j] = posterior_gamma(s.y[j], s.e[j], prior.psi[j]).mean();
    fit.group_posteriors.push_back(gp);
  }
  return fit;
}

}  // namespace mixpois
