#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "mixpois/model.hpp"
#include "mixpois/numeric.hpp"
#include "mixpois/panel_io.hpp"

using namespace mixpois;

namespace {

ObservationCell cell(double exposure, std::int64_t count, Eigen::VectorXd x) {
  ObservationCell c;
  c.interval = 1;
  c.t_right = 21.0;
  c.exposure = exposure;
  c.count = count;
  c.covariates = std::move(x);
  return c;
}

Betas zero_betas() { return {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)}; }

}  // namespace

TEST(EvaluateRate, ZeroExponentIsOne) { EXPECT_DOUBLE_EQ(evaluate_rate({Eigen::VectorXd::Zero(1)}, 5.0), 1.0); }

TEST(EvaluateRate, InactiveToActiveAtZero) {
  EXPECT_DOUBLE_EQ(evaluate_rate({Eigen::Vector2d(0.3, -0.049)}, 0.0), std::exp(0.3));
}

TEST(EvaluateRate, ActiveToInactiveQuadratic) {
  EXPECT_NEAR(evaluate_rate({Eigen::Vector3d(-4.5, -0.018, 0.00064)}, 40.0), std::exp(-4.5 - 0.72 + 1.024), 1e-15);
}

TEST(EvaluateRate, LogIsPolynomial) {
  const Eigen::Vector3d b(-4.5, -0.018, 0.00064);
  for (double t : {0.0, 18.5, 33.0, 66.9}) {
    const double poly = b(0) + b(1) * t + b(2) * t * t;
    EXPECT_NEAR(std::log(evaluate_rate({b}, t)), poly, 1e-14 * (1.0 + std::abs(poly)));
  }
}

TEST(ExposureSums, EmptyGroup) {
  GroupObservations g;
  const auto s = weighted_exposure_sums(g, zero_betas());
  EXPECT_EQ(s.e[0], 0.0);
  EXPECT_EQ(s.e[1], 0.0);
  EXPECT_EQ(s.y[0], 0);
  EXPECT_EQ(s.y[1], 0);
}

TEST(ExposureSums, UnitExposure) {
  GroupObservations g;
  g.of(Characteristic::ai).push_back(cell(1.0, 3, Eigen::VectorXd::Ones(1)));
  g.of(Characteristic::ia).push_back(cell(1.0, 3, Eigen::VectorXd::Ones(1)));
  const auto s = weighted_exposure_sums(g, zero_betas());
  EXPECT_DOUBLE_EQ(s.e[0], 1.0);
  EXPECT_EQ(s.y[0], 3);
  EXPECT_DOUBLE_EQ(s.e[1], 1.0);
}

TEST(ExposureSums, HandSumAndAdditivity) {
  GroupObservations a, b, ab;
  a.of(Characteristic::ai).push_back(cell(1.0, 1, Eigen::VectorXd::Ones(1)));
  b.of(Characteristic::ai).push_back(cell(2.0, 1, Eigen::VectorXd::Ones(1)));
  ab.of(Characteristic::ai) = {a.of(Characteristic::ai)[0], b.of(Characteristic::ai)[0]};
  const auto s = weighted_exposure_sums(ab, zero_betas());
  EXPECT_DOUBLE_EQ(s.e[0], 3.0);
  EXPECT_EQ(s.y[0], 2);
  const Betas nz{Eigen::VectorXd::Constant(1, 0.37), Eigen::VectorXd::Zero(1)};
  EXPECT_NEAR(weighted_exposure_sums(ab, nz).e[0],
              weighted_exposure_sums(a, nz).e[0] + weighted_exposure_sums(b, nz).e[0], 1e-14);
}

TEST(ExposureSums, DimensionMismatchIsConfigError) {
  GroupObservations g;
  g.of(Characteristic::ai).push_back(cell(1.0, 0, Eigen::VectorXd::Ones(3)));
  EXPECT_THROW(weighted_exposure_sums(g, zero_betas()), ConfigError);
}

TEST(Dataset, RejectsCountsWithoutExposureAndDuplicates) {
  PortfolioDataset d;
  d.grid = {20.0, 21.0};
  GroupObservations g;
  g.group_id = "x";
  g.of(Characteristic::ai).push_back(cell(0.0, 1, Eigen::VectorXd::Ones(3)));
  d.groups.push_back(g);
  EXPECT_THROW(d.validate(), DataError);
  d.groups[0].of(Characteristic::ai)[0].count = 0;
  EXPECT_NO_THROW(d.validate());
  d.groups.push_back(d.groups[0]);
  EXPECT_THROW(d.validate(), DataError);
}

TEST(Basis, RightEndpointRows) {
  const auto ai = basis_row(Characteristic::ai, 30.0);
  ASSERT_EQ(ai.size(), 3);
  EXPECT_DOUBLE_EQ(ai(2), 900.0);
  EXPECT_EQ(basis_row(Characteristic::ia, 30.0).size(), 2);
}

TEST(PanelCsv, RoundTrip) {
  PortfolioDataset d;
  d.grid = {20.0, 21.0, 22.0};
  for (std::string id : {"b", "a"}) {
    GroupObservations g;
    g.group_id = id;
    for (auto c : kCharacteristics)
      for (int k = 1; k <= 2; ++k) {
        ObservationCell x;
        x.interval = k;
        x.t_right = 20.0 + k;
        x.exposure = 0.1 * k + 1.0 / 3.0;
        x.count = k;
        x.covariates = basis_row(c, x.t_right);
        g.of(c).push_back(x);
      }
    d.groups.push_back(g);
  }
  std::istringstream is(format_panel_csv(d));
  const auto back = parse_panel_csv(is, d.grid);
  ASSERT_EQ(back.groups.size(), 2u);
  EXPECT_EQ(back.groups[0].group_id, "b");
  for (std::size_t g = 0; g < 2; ++g)
    for (auto c : kCharacteristics)
      for (std::size_t i = 0; i < 2; ++i) {
        const auto& x = d.groups[g].of(c)[i];
        const auto& y = back.groups[g].of(c)[i];
        EXPECT_EQ(x.exposure, y.exposure);
        EXPECT_EQ(x.count, y.count);
        EXPECT_TRUE(x.covariates.isApprox(y.covariates));
      }
}

TEST(PanelCsv, BadHeaderAndBadNumber) {
  std::istringstream bad("group,characteristic\n");
  EXPECT_THROW(parse_panel_csv(bad, {20.0, 21.0}), DataError);
  std::istringstream num(std::string(kPanelHeader) + "\ng,ai,1,21,abc,0\n");
  EXPECT_THROW(parse_panel_csv(num, {20.0, 21.0}), DataError);
  std::istringstream ch(std::string(kPanelHeader) + "\ng,xx,1,21,1,0\n");
  EXPECT_THROW(parse_panel_csv(ch, {20.0, 21.0}), DataError);
}

namespace {

// O(n^2) tau-b from pair counts.
double kendall_brute_force(const std::vector<double>& x, const std::vector<double>& y) {
  double conc = 0.0, disc = 0.0, tx = 0.0, ty = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double s = (x[i] - x[j]) * (y[i] - y[j]);
      if (s > 0) conc += 1;
      if (s < 0) disc += 1;
      if (x[i] == x[j] && y[i] != y[j]) tx += 1;
      if (y[i] == y[j] && x[i] != x[j]) ty += 1;
    }
  return (conc - disc) / std::sqrt((conc + disc + tx) * (conc + disc + ty));
}

}  // namespace

TEST(KendallTau, MatchesPairCountingWithTies) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> small(0, 4);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x, y;
    for (int i = 0; i < 57; ++i) {
      const double a = rep % 2 ? small(rng) : z(rng);
      x.push_back(a);
      y.push_back(rep % 3 ? small(rng) + 0.3 * a : z(rng) - a);
    }
    EXPECT_NEAR(kendall_tau(x, y), kendall_brute_force(x, y), 1e-12) << rep;
  }
}

TEST(KendallTau, PerfectAndUndefined) {
  const std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40}, r{4, 3, 2, 1}, c{1, 1, 1, 1};
  EXPECT_DOUBLE_EQ(kendall_tau(x, y), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(x, r), -1.0);
  EXPECT_TRUE(std::isnan(kendall_tau(x, c)));
}
