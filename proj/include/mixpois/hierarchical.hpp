#pragma once

// Hierarchical Gamma mixing: Theta_0 ~ Gamma(eta, nu) (shape, rate) and,
// given Theta_0, Theta_j ~ Gamma(Theta_0, eta/nu) independently. The
// posterior of Theta_0 is a finite Gamma mixture whose weights come from two
// coefficient recurrences, all carried in log space.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mixpois/glm.hpp"
#include "mixpois/model.hpp"
#include "mixpois/numeric.hpp"

namespace mixpois {

/// o_m = #{j : y_j > m} for m = 0..r, r = max(max_j y_j - 1, 1).
inline std::vector<std::int64_t> occupancy_vector(std::span<const std::int64_t> y) {
  if (y.empty()) throw ParameterError("occupancy_vector: need at least one characteristic");
  std::int64_t ymax = 0;
  for (auto v : y) {
    if (v < 0) throw ParameterError("occupancy_vector: negative count");
    ymax = std::max(ymax, v);
  }
  const std::int64_t r = std::max<std::int64_t>(ymax - 1, 1);
  std::vector<std::int64_t> o(static_cast<std::size_t>(r + 1), 0);
  for (std::int64_t m = 0; m <= r; ++m)
    for (auto v : y)
      if (v > m) ++o[static_cast<std::size_t>(m)];
  return o;
}

/// log a_m(o): log-coefficients of theta^m in prod_s (theta + s)^{o_s}.
/// Built by the recurrence a_m(o* + c_s) = s a_m(o*) + a_{m-1}(o*) along the
/// coordinate-ascending path from 0 to o. Zero coefficients are -inf.
inline std::vector<double> polynomial_coefficients(std::span<const std::int64_t> o) {
  std::int64_t degree = 0;
  for (auto v : o) degree += v;
  std::vector<double> la(static_cast<std::size_t>(degree + 1), kNegInf);
  la[0] = 0.0;
  std::int64_t current = 0;  // current polynomial degree
  for (std::size_t s = 0; s < o.size(); ++s) {
    const double log_s = s == 0 ? kNegInf : std::log(static_cast<double>(s));
    for (std::int64_t rep = 0; rep < o[s]; ++rep) {
      ++current;
      for (std::int64_t m = current; m >= 0; --m) {
        const auto mi = static_cast<std::size_t>(m);
        const double keep = la[mi] == kNegInf || log_s == kNegInf ? kNegInf : log_s + la[mi];
        const double shift = m > 0 ? la[mi - 1] : kNegInf;
        la[mi] = log_add(keep, shift);
      }
    }
  }
  return la;
}

/// Rate of every mixture component: sum_j log(1 + (nu/eta) e_j) + nu.
inline double mixture_rate(double eta, double nu, std::span<const double> e) {
  double acc = nu;
  for (double v : e) acc += std::log1p((nu / eta) * v);
  return acc;
}

/// log b_m for m = 0..m_max, b_m = b_{m-1} (m + eta - 1) / rate, b_0 = 1.
inline std::vector<double> gamma_ratio_coefficients(double eta, double nu, std::span<const double> e,
                                                    std::int64_t m_max) {
  if (!(eta > 0.0) || !(nu > 0.0)) throw ParameterError("gamma_ratio_coefficients: eta, nu must be positive");
  const double log_rate = std::log(mixture_rate(eta, nu, e));
  std::vector<double> lb(static_cast<std::size_t>(m_max + 1));
  lb[0] = 0.0;
  for (std::int64_t m = 1; m <= m_max; ++m)
    lb[static_cast<std::size_t>(m)] =
        lb[static_cast<std::size_t>(m - 1)] + std::log(static_cast<double>(m) + eta - 1.0) - log_rate;
  return lb;
}

struct GammaMixturePosterior {
  double rate = 1.0;
  std::vector<std::int64_t> m;       // component index: shape m + eta
  std::vector<double> shapes;
  std::vector<double> log_weights;   // normalized
  double log_normalizer = 0.0;       // log sum_m a_m b_m

  double mean() const {
    double acc = 0.0;
    for (std::size_t k = 0; k < shapes.size(); ++k) acc += std::exp(log_weights[k]) * shapes[k];
    return acc / rate;
  }
  double mean_log() const {
    // Shapes are consecutive, so psi(x + 1) = psi(x) + 1/x walks the list.
    double acc = 0.0, psi = 0.0;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      psi = k > 0 && shapes[k] == shapes[k - 1] + 1.0 ? psi + 1.0 / shapes[k - 1] : digamma(shapes[k]);
      acc += std::exp(log_weights[k]) * psi;
    }
    return acc - std::log(rate);
  }
  double log_density(double theta) const {
    std::vector<double> terms(shapes.size());
    for (std::size_t k = 0; k < shapes.size(); ++k)
      terms[k] = log_weights[k] + shapes[k] * std::log(rate) - std::lgamma(shapes[k]) +
                 (shapes[k] - 1.0) * std::log(theta) - rate * theta;
    return log_sum_exp(terms);
  }
};

/// Posterior of Theta_0 from precomputed log a_m (which depend on y only).
inline GammaMixturePosterior posterior_theta0_from_coefficients(std::span<const double> log_a,
                                                                std::span<const double> e, const HierPrior& prior) {
  GammaMixturePosterior post;
  post.rate = mixture_rate(prior.eta, prior.nu, e);
  const auto m_max = static_cast<std::int64_t>(log_a.size()) - 1;
  const auto lb = gamma_ratio_coefficients(prior.eta, prior.nu, e, m_max);
  std::vector<double> lw;
  for (std::int64_t m = 0; m <= m_max; ++m) {
    const double la = log_a[static_cast<std::size_t>(m)];
    if (la == kNegInf) continue;
    post.m.push_back(m);
    post.shapes.push_back(static_cast<double>(m) + prior.eta);
    lw.push_back(la + lb[static_cast<std::size_t>(m)]);
  }
  post.log_normalizer = log_sum_exp(lw);
  post.log_weights.resize(lw.size());
  for (std::size_t k = 0; k < lw.size(); ++k) post.log_weights[k] = lw[k] - post.log_normalizer;
  return post;
}

inline GammaMixturePosterior posterior_theta0(std::span<const std::int64_t> y, std::span<const double> e,
                                              const HierPrior& prior) {
  const auto o = occupancy_vector(y);
  const auto la = polynomial_coefficients(o);
  return posterior_theta0_from_coefficients(la, e, prior);
}

/// Unnormalized log posterior density of Theta_0:
/// theta^{eta-1} e^{-nu theta} prod_j Gamma(y_j+theta)/Gamma(theta) (1+(nu/eta)e_j)^{-theta}.
inline double log_unnormalized_posterior_theta0(double theta, std::span<const std::int64_t> y,
                                                std::span<const double> e, const HierPrior& prior) {
  double acc = (prior.eta - 1.0) * std::log(theta) - prior.nu * theta;
  for (std::size_t j = 0; j < y.size(); ++j)
    acc += std::lgamma(static_cast<double>(y[j]) + theta) - std::lgamma(theta) -
           theta * std::log1p((prior.nu / prior.eta) * e[j]);
  return acc;
}

struct HierEStep {
  double theta0 = 0.0;       // E(Theta_0 | y)
  double log_theta0 = 0.0;   // E(log Theta_0 | y)
  std::vector<double> theta; // E(Theta_j | y)
};

inline HierEStep estep_from_posterior(const GammaMixturePosterior& post, std::span<const std::int64_t> y,
                                      std::span<const double> e, const HierPrior& prior) {
  HierEStep out;
  out.theta0 = post.mean();
  out.log_theta0 = post.mean_log();
  out.theta.resize(y.size());
  for (std::size_t j = 0; j < y.size(); ++j)
    out.theta[j] = (static_cast<double>(y[j]) + out.theta0) / (e[j] + prior.delta());
  return out;
}

inline HierEStep estep_hier(std::span<const std::int64_t> y, std::span<const double> e, const HierPrior& prior) {
  return estep_from_posterior(posterior_theta0(y, e, prior), y, e, prior);
}

/// log of the mixing factor of one group:
/// -sum_j y_j log(delta + e_j) + eta log(nu / rate) + log sum_m a_m b_m.
inline double log_hier_factor(const GammaMixturePosterior& post, std::span<const std::int64_t> y,
                              std::span<const double> e, const HierPrior& prior) {
  double acc = prior.eta * std::log(prior.nu / post.rate) + post.log_normalizer;
  for (std::size_t j = 0; j < y.size(); ++j) acc -= static_cast<double>(y[j]) * std::log(prior.delta() + e[j]);
  return acc;
}

/// Observed-data loglikelihood of the panel under the hierarchical prior.
inline double loglik_hierarchical(const PortfolioDataset& data, const Betas& betas, const HierPrior& prior) {
  double acc = 0.0;
  for (const auto& g : data.groups) {
    const auto s = weighted_exposure_sums(g, betas);
    const auto post = posterior_theta0(s.y, s.e, prior);
    acc += log_prefactor(g, betas) + log_hier_factor(post, s.y, s.e, prior);
  }
  return acc;
}

namespace detail {

/// Expected complete-data log-density of the prior part, per group, as a
/// function of (eta, nu) given the E-step averages.
inline double hier_q(double eta, double nu, double q, double theta0, double log_theta0, double theta_bar) {
  return eta * std::log(nu) - std::lgamma(eta) + eta * log_theta0 - nu * theta0 +
         q * theta0 * std::log(eta / nu) - q * (eta / nu) * theta_bar;
}

}  // namespace detail

struct EcmOptions {
  int max_iterations = 1000;
  double rel_tolerance = 1e-9;
  double min_eta = 1e-6;
  PoissonOptions glm{};
};

/// ECM: E-step over groups, GLM per characteristic, closed-form nu, one
/// guarded Newton step for eta.
inline MixedPoissonFit ecm_fit_hier(const PortfolioDataset& data, const EcmOptions& opts = {},
                                    const Betas* init = nullptr, HierPrior prior = {}) {
  const std::size_t G = data.groups.size();
  if (G == 0) throw ConfigError("ecm_fit_hier: empty panel");
  const PooledRegression regression(data);
  const double q = 2.0;

  MixedPoissonFit fit;
  fit.model = "hierarchical";
  fit.betas = init ? *init : fit_standard_model(data, opts.glm).betas;

  // a_m depends on the counts only.
  std::vector<std::vector<double>> log_a(G);
  std::vector<std::array<std::int64_t, 2>> counts(G);
  for (std::size_t g = 0; g < G; ++g) {
    const auto s = weighted_exposure_sums(data.groups[g], fit.betas);
    counts[g] = s.y;
    log_a[g] = polynomial_coefficients(occupancy_vector(s.y));
  }

  auto evaluate = [&](const Betas& betas, const HierPrior& pr, std::vector<HierEStep>* steps) {
    double ll = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      const auto s = weighted_exposure_sums(data.groups[g], betas);
      const auto post = posterior_theta0_from_coefficients(log_a[g], s.e, pr);
      ll += log_prefactor(data.groups[g], betas) + log_hier_factor(post, counts[g], s.e, pr);
      if (steps) (*steps)[g] = estep_from_posterior(post, counts[g], s.e, pr);
    }
    return ll;
  };

  std::vector<HierEStep> steps(G);
  double ll = evaluate(fit.betas, prior, &steps);
  fit.loglik_trace.push_back(ll);
  std::vector<std::array<double, 2>> multipliers(G);
  for (int it = 1; it <= opts.max_iterations; ++it) {
    double t0 = 0.0, tlog = 0.0, tbar = 0.0;
    for (std::size_t g = 0; g < G; ++g) {
      t0 += steps[g].theta0;
      tlog += steps[g].log_theta0;
      tbar += steps[g].theta[0] + steps[g].theta[1];
      multipliers[g] = {steps[g].theta[0], steps[g].theta[1]};
    }
    t0 /= static_cast<double>(G);
    tlog /= static_cast<double>(G);
    tbar /= static_cast<double>(G) * q;

    fit.betas = regression.fit(multipliers, fit.betas, opts.glm);

    // CM step for nu with eta fixed: positive root of the score quadratic.
    const double eta = prior.eta;
    const double lin = eta / q - t0;
    const double nu_new = (lin + std::sqrt(lin * lin + 4.0 * eta * t0 * tbar / q)) / (2.0 * t0 / q);
    if (std::isfinite(nu_new) && nu_new > 0.0) prior.nu = nu_new;

    // CM step for eta: one Newton step, halved while it leaves (0, inf) or
    // fails to increase the expected complete-data loglikelihood.
    const double score = (std::log(prior.nu) - digamma(eta) + tlog) / q + t0 / eta - tbar / prior.nu;
    const double curvature = -trigamma(eta) / q - t0 / (eta * eta);
    double step = -score / curvature;
    const double q_old = detail::hier_q(eta, prior.nu, q, t0, tlog, tbar);
    double eta_new = eta;
    for (int h = 0; h < 60; ++h, step *= 0.5) {
      const double cand = eta + step;
      if (!(cand > opts.min_eta)) {
        if (h == 0) fit.diagnostics.push_back("eta step halved to stay positive");
        continue;
      }
      if (detail::hier_q(cand, prior.nu, q, t0, tlog, tbar) >= q_old) {
        eta_new = cand;
        break;
      }
    }
    prior.eta = eta_new;

    const double ll_new = evaluate(fit.betas, prior, &steps);
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
  for (std::size_t g = 0; g < G; ++g)
    fit.group_posteriors.push_back({data.groups[g].group_id, {steps[g].theta[0], steps[g].theta[1]}});
  return fit;
}

}  // namespace mixpois
