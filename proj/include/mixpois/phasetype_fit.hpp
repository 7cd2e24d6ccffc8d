#pragma once

// EM for the bivariate phase-type mixed Poisson regression. The prior
// update either fits the averaged posterior represented on a quadrature grid
// by a few weighted PH EM steps (default), or uses the exact posterior
// expectations of the jump-process statistics, which is much faster.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mixpois/glm.hpp"
#include "mixpois/model.hpp"
#include "mixpois/numeric.hpp"
#include "mixpois/phasetype.hpp"
#include "mixpois/random.hpp"

namespace mixpois {

struct WeightedSample2D {
  std::vector<std::array<double, 2>> nodes;
  std::vector<double> weights;

  double effective_size() const {
    double s2 = 0.0;
    for (double w : weights) s2 += w * w;
    return s2 > 0.0 ? 1.0 / s2 : 0.0;
  }
};

struct CountSummary {
  std::array<std::int64_t, 2> y{};
  std::array<double, 2> e{};
};

namespace detail {

/// Smallest Q (by doubling, then bisection) with F(Q) >= 1 - tail.
inline double ph_upper_quantile(const UnivariatePH& ph, double tail) {
  double hi = std::max(ph_mean(ph), 1e-3);
  while (1.0 - ph_cdf(ph, hi) > tail) hi *= 2.0;
  double lo = 0.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (1.0 - ph_cdf(ph, mid) > tail ? lo : hi) = mid;
  }
  return hi;
}

/// Gauss-Legendre nodes on [0, Q]. When the posterior bulk ends at B well
/// below Q, three quarters of the nodes go to [0, B] and the rest to [B, Q].
inline QuadratureRule axis_rule(std::size_t n, double B, double Q) {
  if (!(B < 0.5 * Q) || n < 8) return gauss_legendre(n, 0.0, Q);
  const std::size_t tail = n / 4;
  auto rule = gauss_legendre(n - tail, 0.0, B);
  const auto upper = gauss_legendre(tail, B, Q);
  rule.nodes.insert(rule.nodes.end(), upper.nodes.begin(), upper.nodes.end());
  rule.weights.insert(rule.weights.end(), upper.weights.begin(), upper.weights.end());
  return rule;
}

}  // namespace detail

/// Averaged posterior (1/N) sum_n f_{Theta|Y}(. | y_n) on an n x n tensor
/// Gauss-Legendre grid. Each axis covers its prior margin to 1 - 1e-8 and
/// every group's posterior mean plus eight posterior standard deviations.
inline WeightedSample2D build_posterior_target(const BivariatePH& b, const std::vector<CountSummary>& groups,
                                               std::size_t n = 64) {
  if (groups.empty()) throw ConfigError("build_posterior_target: no groups");
  std::array<double, 2> bulk{0.0, 0.0};
  for (const auto& g : groups) {
    for (int j = 0; j < 2; ++j) {
      const double m = posterior_cross_moment(b, g.y, g.e, j == 0 ? 1 : 0, j == 1 ? 1 : 0);
      const double m2 = posterior_cross_moment(b, g.y, g.e, j == 0 ? 2 : 0, j == 1 ? 2 : 0);
      bulk[j] = std::max(bulk[j], m + 8.0 * std::sqrt(std::max(m2 - m * m, 0.0)));
    }
  }
  const double Q1 = std::max(detail::ph_upper_quantile(first_marginal(b), 1e-8), bulk[0]);
  const double Q2 = std::max(detail::ph_upper_quantile(second_marginal(b), 1e-8), bulk[1]);
  const auto rule1 = detail::axis_rule(n, bulk[0], Q1);
  const auto rule2 = detail::axis_rule(n, bulk[1], Q2);

  // log prior density on the grid: eta e^{T11 th1} T12 . e^{T22 th2} t2
  std::vector<Eigen::RowVectorXd> left(n);
  std::vector<Eigen::VectorXd> right(n);
  const Eigen::VectorXd t2 = b.exit2();
  for (std::size_t i = 0; i < n; ++i) {
    left[i] = b.eta * matrix_exponential(b.T11 * rule1.nodes[i]) * b.T12;
    right[i] = matrix_exponential(b.T22 * rule2.nodes[i]) * t2;
  }

  // Per-group constant: -log y! - (y+1) log sigma - log expression.
  std::vector<double> group_const(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto post = ph_group_posterior(b, groups[g].y, groups[g].e, false);
    double c = -post.log_expression;
    for (std::size_t j = 0; j < 2; ++j) {
      const double log_sigma = groups[g].e[j] > 0.0 ? -std::log(groups[g].e[j]) : 0.0;
      c -= log_factorial(groups[g].y[j]) + static_cast<double>(groups[g].y[j] + 1) * log_sigma;
    }
    group_const[g] = c;
  }

  WeightedSample2D sample;
  sample.nodes.reserve(n * n);
  sample.weights.reserve(n * n);
  std::vector<double> terms(groups.size());
  const double log_n = std::log(static_cast<double>(groups.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const double th1 = rule1.nodes[i];
    for (std::size_t k = 0; k < n; ++k) {
      const double th2 = rule2.nodes[k];
      const double prior = left[i].dot(right[k]);
      double w = 0.0;
      if (prior > 0.0) {
        const double log_prior = std::log(prior);
        for (std::size_t g = 0; g < groups.size(); ++g) {
          const auto& G = groups[g];
          terms[g] = group_const[g] + log_prior + xlogy(static_cast<double>(G.y[0]), th1) - th1 * G.e[0] +
                     xlogy(static_cast<double>(G.y[1]), th2) - th2 * G.e[1];
        }
        w = rule1.weights[i] * rule2.weights[k] * std::exp(log_sum_exp(terms) - log_n);
      }
      sample.nodes.push_back({th1, th2});
      sample.weights.push_back(w);
    }
  }
  double total = 0.0;
  for (double w : sample.weights) total += w;
  if (!(total > 0.0)) throw GridTooCoarse("posterior target has no mass on the grid");
  for (double& w : sample.weights) w /= total;
  if (sample.effective_size() < 10.0)
    throw GridTooCoarse("posterior target effective sample size below 10; refine the grid");
  return sample;
}

/// Sum of w log f(theta) over the sample.
inline double weighted_loglik(const BivariatePH& b, const WeightedSample2D& sample) {
  double acc = 0.0;
  for (std::size_t i = 0; i < sample.nodes.size(); ++i)
    if (sample.weights[i] > 0.0)
      acc += sample.weights[i] * std::log(bivph_density(b, sample.nodes[i][0], sample.nodes[i][1]));
  return acc;
}

/// Expected complete-data statistics for fully observed (theta1, theta2)
/// pairs with weights. Nodes sharing a coordinate value share one
/// block-exponential evaluation.
inline PhStatistics weighted_ph_statistics(const BivariatePH& b, const WeightedSample2D& sample) {
  const Eigen::Index p1 = b.p1(), p2 = b.p2();
  const Eigen::VectorXd t2 = b.exit2();
  PhStatistics st = PhStatistics::zeros(p1, p2);

  std::map<double, Eigen::MatrixXd> E1, E2;
  auto expm_at = [](std::map<double, Eigen::MatrixXd>& cache, const Eigen::MatrixXd& T, double th) -> const Eigen::MatrixXd& {
    auto it = cache.find(th);
    if (it == cache.end()) it = cache.emplace(th, matrix_exponential(T * th)).first;
    return it->second;
  };
  std::map<double, Eigen::VectorXd> c1_sum;     // sum (w/f) T12 e^{T22 th2} t2 per th1
  std::map<double, Eigen::RowVectorXd> a2_sum;  // sum (w/f) eta e^{T11 th1} T12 per th2

  for (std::size_t i = 0; i < sample.nodes.size(); ++i) {
    const double w = sample.weights[i];
    if (!(w > 0.0)) continue;
    const double th1 = sample.nodes[i][0], th2 = sample.nodes[i][1];
    const Eigen::MatrixXd& e1 = expm_at(E1, b.T11, th1);
    const Eigen::MatrixXd& e2 = expm_at(E2, b.T22, th2);
    const Eigen::RowVectorXd a1 = b.eta * e1;
    const Eigen::VectorXd b2 = e2 * t2;
    const Eigen::VectorXd c1 = b.T12 * b2;
    const double f = a1.dot(c1);
    if (!(f > 0.0)) continue;
    const double wf = w / f;
    st.weight += w;
    st.starts += wf * b.eta.transpose().cwiseProduct(e1 * c1);
    st.jumps12 += wf * b.T12.cwiseProduct(a1.transpose() * b2.transpose());
    const Eigen::RowVectorXd a2 = a1 * b.T12;
    st.exits2 += wf * t2.cwiseProduct((a2 * e2).transpose());
    auto [it1, new1] = c1_sum.try_emplace(th1, Eigen::VectorXd::Zero(p1));
    it1->second += wf * c1;
    auto [it2, new2] = a2_sum.try_emplace(th2, Eigen::RowVectorXd::Zero(p2));
    it2->second += wf * a2;
  }

  // Integral of e^{T(th-u)} c a e^{Tu} over [0, th]: upper-right block of
  // exp([[T, c a], [0, T]] th). The block is linear in c a, which is scaled
  // to unit norm so it does not inflate the number of squarings.
  auto occupation = [](const Eigen::MatrixXd& T, const Eigen::MatrixXd& A, double th) {
    const Eigen::Index p = T.rows();
    const double scale = A.cwiseAbs().maxCoeff();
    if (!(scale > 0.0)) return Eigen::MatrixXd(Eigen::MatrixXd::Zero(p, p));
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * p, 2 * p);
    M.topLeftCorner(p, p) = T;
    M.topRightCorner(p, p) = A / scale;
    M.bottomRightCorner(p, p) = T;
    return Eigen::MatrixXd(scale * matrix_exponential(M * th).topRightCorner(p, p));
  };
  for (const auto& [th1, c1] : c1_sum) {
    const Eigen::MatrixXd J = occupation(b.T11, c1 * b.eta, th1);
    st.occupancy1 += J.diagonal();
    st.jumps11 += b.T11.cwiseProduct(J.transpose());
  }
  for (const auto& [th2, a2] : a2_sum) {
    const Eigen::MatrixXd J = occupation(b.T22, t2 * a2, th2);
    st.occupancy2 += J.diagonal();
    st.jumps22 += b.T22.cwiseProduct(J.transpose());
  }
  st.jumps11.diagonal().setZero();
  st.jumps22.diagonal().setZero();
  return st;
}

/// One EM step of the bivariate PH fitted to a weighted sample.
inline BivariatePH weighted_bivph_em_step(const BivariatePH& b, const WeightedSample2D& sample,
                                          std::vector<std::string>* held = nullptr) {
  return ph_mstep(weighted_ph_statistics(b, sample), b, held);
}

/// Random feed-forward PH with diagonals near -(1..p), exits from block 1
/// spread evenly over block 2, rescaled so both margins have mean 1.
inline BivariatePH random_bivph(Eigen::Index p1, Eigen::Index p2, std::uint64_t seed) {
  if (p1 < 1 || p2 < 1) throw ConfigError("phase-type dimensions must be at least 1");
  Rng rng = make_rng(seed, {0x7068});
  BivariatePH b;
  b.eta = Eigen::RowVectorXd::Constant(p1, 1.0 / static_cast<double>(p1));
  b.T11 = Eigen::MatrixXd::Zero(p1, p1);
  b.T12 = Eigen::MatrixXd::Zero(p1, p2);
  b.T22 = Eigen::MatrixXd::Zero(p2, p2);

  auto fill_block = [&](Eigen::MatrixXd& T, Eigen::Index k, double rate) {
    const Eigen::Index p = T.rows();
    const double inside = p > 1 ? 0.5 * uniform01(rng) : 0.0;
    double norm = 0.0;
    std::vector<double> u(static_cast<std::size_t>(p), 0.0);
    for (Eigen::Index l = 0; l < p; ++l)
      if (l != k) norm += (u[static_cast<std::size_t>(l)] = uniform01(rng));
    for (Eigen::Index l = 0; l < p; ++l)
      if (l != k) T(k, l) = rate * inside * u[static_cast<std::size_t>(l)] / norm;
    T(k, k) = -rate;
    return rate * (1.0 - inside);  // mass leaving the block
  };
  for (Eigen::Index k = 0; k < p1; ++k) {
    const double rate = static_cast<double>(k + 1) * (0.9 + 0.2 * uniform01(rng));
    const double out = fill_block(b.T11, k, rate);
    b.T12.row(k).setConstant(out / static_cast<double>(p2));
  }
  for (Eigen::Index k = 0; k < p2; ++k) {
    const double rate = static_cast<double>(k + 1) * (0.9 + 0.2 * uniform01(rng));
    fill_block(b.T22, k, rate);
  }
  const double m1 = ph_mean(first_marginal(b));
  b.T11 *= m1;
  b.T12 *= m1;
  b.T22 *= ph_mean(second_marginal(b));
  return b;
}

enum class PhPriorUpdate { exact, grid };

struct PhEmOptions {
  int p1 = 3;
  int p2 = 3;
  std::uint64_t seed = 1;
  PhPriorUpdate update = PhPriorUpdate::grid;
  int inner_steps = 3;            // grid update only
  std::size_t grid_nodes = 64;    // grid update only
  int max_iterations = 3000;
  double rel_tolerance = 1e-9;
  double decrease_tolerance = 1e-4;  // relative; larger drops abort the fit
  PoissonOptions glm{};
};

inline std::vector<CountSummary> count_summaries(const PortfolioDataset& data, const Betas& betas) {
  std::vector<CountSummary> out(data.groups.size());
  for (std::size_t g = 0; g < data.groups.size(); ++g) {
    const auto s = weighted_exposure_sums(data.groups[g], betas);
    out[g] = {s.y, s.e};
  }
  return out;
}

inline double loglik_phasetype(const PortfolioDataset& data, const Betas& betas, const BivariatePH& b) {
  double acc = 0.0;
  for (const auto& g : data.groups) {
    const auto s = weighted_exposure_sums(g, betas);
    acc += log_joint_count_density(b, s.y, s.e, log_prefactor(g, betas));
  }
  return acc;
}

/// Outer EM: posterior means by cross-moments, Poisson regressions with
/// offsets E(Theta_j|y) E_ij, then a prior update.
inline MixedPoissonFit em_fit_bivph_mixed_poisson(const PortfolioDataset& data, const PhEmOptions& opts = {},
                                                  const Betas* init = nullptr, const BivariatePH* init_prior = nullptr) {
  const std::size_t G = data.groups.size();
  if (G == 0) throw ConfigError("em_fit_bivph_mixed_poisson: empty panel");
  if (opts.inner_steps < 1) throw ConfigError("inner_steps must be positive");
  const PooledRegression regression(data);

  MixedPoissonFit fit;
  fit.model = "phasetype";
  fit.seed = opts.seed;
  fit.betas = init ? *init : fit_standard_model(data, opts.glm).betas;
  BivariatePH prior = init_prior ? *init_prior : random_bivph(opts.p1, opts.p2, opts.seed);
  validate(prior, 1e-8);

  double ll = loglik_phasetype(data, fit.betas, prior);
  fit.loglik_trace.push_back(ll);
  std::vector<std::array<double, 2>> multipliers(G);
  const bool exact = opts.update == PhPriorUpdate::exact;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const auto sums = count_summaries(data, fit.betas);
    PhStatistics stats = PhStatistics::zeros(prior.p1(), prior.p2());
    for (std::size_t g = 0; g < G; ++g) {
      const auto post = ph_group_posterior(prior, sums[g].y, sums[g].e, exact);
      multipliers[g] = post.mean;
      if (exact) stats += post.stats;
    }
    const Betas betas = regression.fit(multipliers, fit.betas, opts.glm);

    std::vector<std::string> held;
    BivariatePH next = prior;
    if (exact) {
      next = ph_mstep(stats, prior, &held);
    } else {
      const auto target = build_posterior_target(prior, sums, opts.grid_nodes);
      for (int s = 0; s < opts.inner_steps; ++s) next = weighted_bivph_em_step(next, target, &held);
    }
    for (auto& h : held) fit.diagnostics.push_back(fmt::format("iteration {}: {}", it, h));

    const double ll_new = loglik_phasetype(data, betas, next);
    if (!std::isfinite(ll_new) || ll_new < ll - opts.decrease_tolerance * std::abs(ll)) {
      fit.diagnostics.push_back(fmt::format("iteration {}: loglik fell from {:.10g} to {:.10g}; stopped at previous iterate",
                                            it, ll, ll_new));
      break;
    }
    fit.betas = betas;
    prior = next;
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
  for (std::size_t g = 0; g < G; ++g) {
    const auto s = weighted_exposure_sums(data.groups[g], fit.betas);
    const auto post = ph_group_posterior(prior, s.y, s.e, false);
    fit.group_posteriors.push_back({data.groups[g].group_id, post.mean});
  }
  return fit;
}

}  // namespace mixpois
