#include <gtest/gtest.h>

#include "mixpois/gamma_mixing.hpp"
#include "test_support.hpp"

using namespace mixpois;
using testing_support::synthetic_panel;

namespace {

// One group, one cell per characteristic with intercept-only covariates.
PortfolioDataset single_cell_panel(double e_ai, std::int64_t y_ai, double e_ia, std::int64_t y_ia) {
  PortfolioDataset d;
  d.grid = {0.0, 1.0};
  GroupObservations g;
  g.group_id = "only";
  for (auto [c, e, y] : {std::tuple{Characteristic::ai, e_ai, y_ai}, std::tuple{Characteristic::ia, e_ia, y_ia}}) {
    ObservationCell cell;
    cell.interval = 1;
    cell.t_right = 1.0;
    cell.exposure = e;
    cell.count = y;
    cell.covariates = Eigen::VectorXd::Ones(1);
    g.of(c).push_back(cell);
  }
  d.groups.push_back(g);
  return d;
}

const Betas kZero{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};

}  // namespace

TEST(NegBinFactor, GeometricHalf) {
  // With psi = 1 and e = 1 the margin is geometric(1/2).
  EXPECT_NEAR(log_negbin_factor(0, 1.0, 1.0), std::log(0.5), 1e-14);
  EXPECT_NEAR(log_negbin_factor(1, 1.0, 1.0) + std::log(1.0), std::log(0.25), 1e-14);
}

TEST(LoglikGamma, GeometricOracleOnPanel) {
  // ia margin with zero exposure contributes log 1.
  auto d = single_cell_panel(1.0, 0, 0.0, 0);
  EXPECT_NEAR(loglik_independent_gamma(d, kZero, {{1.0, 1.0}}), std::log(0.5), 1e-14);
  d = single_cell_panel(1.0, 1, 0.0, 0);
  EXPECT_NEAR(loglik_independent_gamma(d, kZero, {{1.0, 1.0}}), std::log(0.25), 1e-14);
}

TEST(LoglikGamma, DegeneratePriorIsPoisson) {
  const auto d = synthetic_panel(5, 20.0, 20, 4, testing_support::unit_effect);
  const Betas b = true_betas();
  std::vector<GroupPosterior> ones;
  for (const auto& g : d.groups) ones.push_back({g.group_id, {1.0, 1.0}});
  EXPECT_NEAR(loglik_independent_gamma(d, b, {{1e-8, 1e-8}}), panel_poisson_loglik(d, b, ones), 1e-4);
}

TEST(LoglikGamma, MatchesNumericalIntegration) {
  for (auto [y, e, psi] : std::vector<std::tuple<std::int64_t, double, double>>{{3, 2.5, 0.7}, {0, 4.0, 2.0}, {12, 9.0, 0.1}}) {
    const double a = 1.0 / psi;
    const auto f = [&](double th) {
      const double lp = static_cast<double>(y) * std::log(th * e) - th * e - std::lgamma(y + 1.0);
      const double lg = a * std::log(a) - std::lgamma(a) + (a - 1.0) * std::log(th) - a * th;
      return std::exp(lp + lg);
    };
    const double direct = std::log(testing_support::integrate_half_line(f));
    const auto d = single_cell_panel(e, y, 0.0, 0);
    EXPECT_NEAR(loglik_independent_gamma(d, kZero, {{psi, 1.0}}), direct, 1e-8);
  }
}

TEST(PosteriorGamma, Examples) {
  auto p = posterior_gamma(0, 0.0, 0.3);
  EXPECT_DOUBLE_EQ(p.mean(), 1.0);
  p = posterior_gamma(5, 5.0, 1.0);
  EXPECT_DOUBLE_EQ(p.shape, 6.0);
  EXPECT_DOUBLE_EQ(p.rate, 6.0);
  p = posterior_gamma(10, 2.0, 0.5);
  EXPECT_DOUBLE_EQ(p.shape, 12.0);
  EXPECT_DOUBLE_EQ(p.rate, 4.0);
  EXPECT_DOUBLE_EQ(p.mean(), 3.0);
}

TEST(PosteriorGamma, CredibilityWeighting) {
  for (auto [y, e, g] : std::vector<std::tuple<std::int64_t, double, double>>{{7, 3.2, 0.4}, {1, 10.0, 2.5}}) {
    const double w = e / (e + 1.0 / g);
    EXPECT_NEAR(posterior_gamma(y, e, g).mean(), w * (static_cast<double>(y) / e) + (1.0 - w), 1e-12);
  }
}

TEST(SolveGammaShape, InvertsEquation) {
  for (double a : {0.05, 0.8, 3.0, 250.0}) {
    const double c = std::log(a) - digamma(a);
    EXPECT_NEAR(detail::solve_gamma_shape(c), a, 1e-8 * a);
  }
}

TEST(EmGamma, NoHeterogeneityGivesSmallPsi) {
  const auto d = synthetic_panel(60, 400.0, 47, 21, testing_support::unit_effect);
  const auto fit = em_fit_independent_gamma(d);
  const auto& prior = std::get<GammaPrior>(fit.prior);
  EXPECT_LT(prior.psi[0], 0.05);
  EXPECT_LT(prior.psi[1], 0.05);
}

TEST(EmGamma, MonotoneAndRecoversVariance) {
  std::gamma_distribution<double> ga(2.0, 0.5);  // variance 0.5
  const auto d = synthetic_panel(150, 200.0, 40, 5, [&](std::mt19937_64& r) -> std::array<double, 2> {
    return {ga(r), ga(r)};
  });
  const auto fit = em_fit_independent_gamma(d);
  ASSERT_TRUE(fit.converged);
  for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i)
    EXPECT_GE(fit.loglik_trace[i] - fit.loglik_trace[i - 1], -1e-8 * std::abs(fit.loglik_trace[i]));
  const auto& prior = std::get<GammaPrior>(fit.prior);
  EXPECT_NEAR(prior.psi[0], 0.5, 0.2);
  EXPECT_NEAR(fit.loglik, loglik_independent_gamma(d, fit.betas, prior), 1e-9 * std::abs(fit.loglik));
}

TEST(EmGamma, SingleGroupShrinksTowardOne) {
  auto d = synthetic_panel(1, 30.0, 30, 9, [](std::mt19937_64&) -> std::array<double, 2> { return {2.0, 0.5}; });
  const auto fit = em_fit_independent_gamma(d);
  const auto s = weighted_exposure_sums(d.groups[0], fit.betas);
  for (std::size_t j = 0; j < 2; ++j) {
    const double raw = static_cast<double>(s.y[j]) / s.e[j];
    const double m = fit.group_posteriors[0].theta[j];
    EXPECT_TRUE(std::isfinite(m));
    EXPECT_GE(m, std::min(raw, 1.0) - 1e-9);
    EXPECT_LE(m, std::max(raw, 1.0) + 1e-9);
  }
}
