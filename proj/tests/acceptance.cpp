// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 3 6`.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "mixpois/study.hpp"
#include "test_support.hpp"

using namespace mixpois;
using testing_support::integrate;
using testing_support::integrate_half_line;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      notes.push_back("failed: " + what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

BivariatePH independent_exponentials(double a, double b) {
  BivariatePH ph;
  ph.eta = Eigen::RowVectorXd::Ones(1);
  ph.T11 = Eigen::MatrixXd::Constant(1, 1, -a);
  ph.T12 = Eigen::MatrixXd::Constant(1, 1, a);
  ph.T22 = Eigen::MatrixXd::Constant(1, 1, -b);
  return ph;
}

BivariatePH coupled() {
  BivariatePH ph;
  ph.eta = Eigen::RowVector2d(0.3, 0.7);
  ph.T11.resize(2, 2);
  ph.T11 << -2.0, 0.5, 0.2, -0.9;
  ph.T12.resize(2, 2);
  ph.T12 << 1.5, 0.0, 0.1, 0.6;
  ph.T22.resize(2, 2);
  ph.T22 << -3.0, 1.0, 0.0, -0.7;
  return ph;
}

PortfolioDataset desk_panel(CaseTag c) {
  StudyConfig cfg;
  return simulate_panel(make_portfolio(cfg.scenario(c)), 0, cfg.anchor);
}

// One group with a single intercept-only cell per characteristic.
PortfolioDataset single_cell_panel(std::array<double, 2> e, std::array<std::int64_t, 2> y) {
  PortfolioDataset d;
  d.grid = {0.0, 1.0};
  GroupObservations g;
  g.group_id = "only";
  for (auto c : kCharacteristics) {
    ObservationCell cell;
    cell.interval = 1;
    cell.t_right = 1.0;
    cell.exposure = e[index(c)];
    cell.count = y[index(c)];
    cell.covariates = Eigen::VectorXd::Ones(1);
    g.of(c).push_back(cell);
  }
  d.groups.push_back(g);
  return d;
}

// ---------------------------------------------------------------------------

Outcome monotonicity() {
  Outcome out;
  const StudyConfig cfg;
  for (auto c : {CaseTag::A, CaseTag::B}) {
    const auto data = desk_panel(c);
    for (const std::string model : {"simple", "hierarchical", "phasetype"}) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto fit = fit_model(model, data, cfg, c);
      const double secs = seconds_since(t0);
      const double tol = model == "phasetype" ? 1e-4 : 1e-8;
      double drop = 0.0;
      for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k)
        drop = std::max(drop, (fit.loglik_trace[k - 1] - fit.loglik_trace[k]) / std::abs(fit.loglik_trace[k - 1]));
      const auto tag = fmt::format("{} case {}", model, case_name(c));
      out.check(drop <= tol, fmt::format("{} relative decrease {:.3g}", tag, drop));
      out.check(secs < 300.0, fmt::format("{} took {:.1f} s", tag, secs));
      out.note(fmt::format("{}: {} iterations, {:.1f} s, largest relative drop {:.2g}", tag, fit.iterations, secs, drop));
    }
  }
  return out;
}

Outcome oracles() {
  Outcome out;
  // (a) independent Gamma mixing, one cell per margin, against the double
  // integral of the Poisson likelihood times the product Gamma density.
  {
    double worst = 0.0;
    for (auto [y, e, psi] : std::vector<std::tuple<std::array<std::int64_t, 2>, std::array<double, 2>, std::array<double, 2>>>{
             {{3, 1}, {2.5, 0.4}, {0.7, 1.3}}, {{0, 2}, {4.0, 1.1}, {2.0, 0.3}}, {{12, 0}, {9.0, 0.2}, {0.1, 0.5}}}) {
      auto margin = [&](std::size_t j) {
        return [&, j](double th) {
          const double a = 1.0 / psi[j];
          const double lp = static_cast<double>(y[j]) * std::log(th * e[j]) - th * e[j] - std::lgamma(y[j] + 1.0);
          const double lg = a * std::log(a) - std::lgamma(a) + (a - 1.0) * std::log(th) - a * th;
          return std::exp(lp + lg);
        };
      };
      const auto f0 = margin(0), f1 = margin(1);
      const double joint = integrate_half_line([&](double t0) {
        return integrate_half_line([&](double t1) { return f0(t0) * f1(t1); });
      });
      const Betas zero{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
      const double mine = loglik_independent_gamma(single_cell_panel(e, y), zero, {psi});
      worst = std::max(worst, std::abs(mine - std::log(joint)));
    }
    out.check(worst <= 1e-8, fmt::format("(a) gamma joint density error {:.2g}", worst));
    out.note(fmt::format("(a) max log error {:.2g}", worst));
  }
  // (b) hierarchical posterior of Theta_0 against the normalized quadrature.
  {
    const HierPrior prior{1.3, 0.8};
    const std::vector<double> e{2.0, 0.7};
    double worst = 0.0;
    for (const std::vector<std::int64_t>& y : {std::vector<std::int64_t>{2, 1}, {6, 3}, {0, 4}}) {
      const auto p = posterior_theta0(y, e, prior);
      const auto un = [&](double t) { return std::exp(log_unnormalized_posterior_theta0(t, y, e, prior)); };
      const double Z = integrate_half_line(un);
      for (double t : {0.1, 0.3, 1.0, 2.5, 6.0})
        worst = std::max(worst, std::abs(std::exp(p.log_density(t)) / (un(t) / Z) - 1.0));
      const double m1 = integrate_half_line([&](double t) { return t * un(t); }) / Z;
      worst = std::max(worst, std::abs(estep_hier(y, e, prior).theta0 / m1 - 1.0));
    }
    out.check(worst <= 1e-6, fmt::format("(b) hierarchical posterior relative error {:.2g}", worst));
    out.note(fmt::format("(b) max relative error {:.2g}", worst));
  }
  // (c) phase-type posterior cross moments against 2-D quadrature.
  {
    const auto b = coupled();
    const std::array<std::int64_t, 2> y{3, 1};
    const std::array<double, 2> e{1.4, 0.6};
    const auto post = [&](double x, double z) { return std::exp(posterior_log_density(b, y, e, x, z)); };
    const auto quad = [&](int k, int s) {
      return integrate([&](double x) {
        return integrate([&](double z) { return std::pow(x, k) * std::pow(z, s) * post(x, z); }, 0.0, 40.0);
      }, 0.0, 40.0);
    };
    double worst = 0.0;
    for (auto [k, s] : std::vector<std::pair<int, int>>{{1, 0}, {0, 1}, {1, 1}, {2, 0}, {0, 2}})
      worst = std::max(worst, std::abs(posterior_cross_moment(b, y, e, k, s) / quad(k, s) - 1.0));
    out.check(worst <= 1e-6, fmt::format("(c) cross moment relative error {:.2g}", worst));
    out.note(fmt::format("(c) max relative error {:.2g}", worst));
  }
  // (d) one phase per block: product of shape-one negative binomials.
  {
    double worst = 0.0;
    for (auto [a, bb, y, e] : std::vector<std::tuple<double, double, std::array<std::int64_t, 2>, std::array<double, 2>>>{
             {1.3, 0.6, {4, 2}, {2.5, 0.8}}, {0.2, 5.0, {0, 9}, {7.0, 3.0}}, {3.0, 1.0, {40, 0}, {12.0, 0.5}}}) {
      const auto b = independent_exponentials(a, bb);
      const double pref = xlogy(static_cast<double>(y[0]), e[0]) - log_factorial(y[0]) +
                          xlogy(static_cast<double>(y[1]), e[1]) - log_factorial(y[1]);
      double want = 0.0;
      for (auto [rate, n, ex] : {std::tuple{a, y[0], e[0]}, std::tuple{bb, y[1], e[1]}})
        want += xlogy(static_cast<double>(n), ex) + std::log(rate) - static_cast<double>(n + 1) * std::log(ex + rate);
      worst = std::max(worst, std::abs(log_joint_count_density(b, y, e, pref) - want));
    }
    out.check(worst <= 1e-10, fmt::format("(d) negative binomial error {:.2g}", worst));
    out.note(fmt::format("(d) max log error {:.2g}", worst));
  }
  return out;
}

// Coefficients of prod_j theta (theta+1) ... (theta+y_j-1) by expansion.
std::vector<double> rising_product(const std::vector<std::int64_t>& y) {
  std::vector<double> p{1.0};
  for (auto yj : y)
    for (std::int64_t s = 0; s < yj; ++s) {
      std::vector<double> q(p.size() + 1, 0.0);
      for (std::size_t m = 0; m < p.size(); ++m) {
        q[m + 1] += p[m];
        q[m] += static_cast<double>(s) * p[m];
      }
      p = q;
    }
  return p;
}

// Every count vector with positive entries in nonincreasing order and sum <= n.
void partitions(std::int64_t remaining, std::int64_t cap, std::vector<std::int64_t>& cur,
                std::vector<std::vector<std::int64_t>>& out) {
  out.push_back(cur);
  for (std::int64_t v = std::min(remaining, cap); v >= 1; --v) {
    cur.push_back(v);
    partitions(remaining - v, v, cur, out);
    cur.pop_back();
  }
}

Outcome recurrence() {
  Outcome out;
  std::vector<std::vector<std::int64_t>> all;
  std::vector<std::int64_t> cur;
  partitions(12, 12, cur, all);
  double worst = 0.0;
  for (auto y : all) {
    y.push_back(0);  // a group with a zero count changes nothing
    const auto la = polynomial_coefficients(occupancy_vector(y));
    const auto brute = rising_product(y);
    if (la.size() != brute.size()) {
      out.check(false, "coefficient count differs");
      continue;
    }
    for (std::size_t m = 0; m < la.size(); ++m) {
      if (brute[m] == 0.0)
        out.check(la[m] == kNegInf, "structural zero not -inf");
      else
        worst = std::max(worst, std::abs(la[m] - std::log(brute[m])));
    }
  }
  out.check(worst <= 1e-10, fmt::format("log coefficient error {:.2g}", worst));
  out.note(fmt::format("{} count vectors, max log error {:.2g}", all.size(), worst));
  return out;
}

Outcome stability() {
  Outcome out;
  const auto b = coupled();
  const double big = log_joint_count_density(b, {500, 500}, {500.0, 500.0}, 0.0);
  out.check(std::isfinite(big), "y = 500 result not finite");
  // The unscaled expression overflows in double at this size.
  out.check(!std::isfinite(std::tgamma(501.0)), "500! unexpectedly finite");
  // At y = 50 the unscaled matrix product is representable; compare its log.
  double worst = 0.0;
  for (auto [y, e] : std::vector<std::pair<std::array<std::int64_t, 2>, std::array<double, 2>>>{
           {{50, 50}, {50.0, 50.0}}, {{50, 3}, {20.0, 0.7}}, {{0, 50}, {1.0, 60.0}}}) {
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd S1 = (e[0] * I - b.T11).inverse(), S2 = (e[1] * I - b.T22).inverse();
    Eigen::MatrixXd P1 = I, P2 = I;
    for (std::int64_t i = 0; i <= y[0]; ++i) P1 = P1 * S1;
    for (std::int64_t i = 0; i <= y[1]; ++i) P2 = P2 * S2;
    const double brute = std::log((b.eta * P1 * b.T12 * P2 * b.exit2())(0)) + xlogy(static_cast<double>(y[0]), e[0]) +
                         xlogy(static_cast<double>(y[1]), e[1]);
    const double pref = xlogy(static_cast<double>(y[0]), e[0]) - log_factorial(y[0]) +
                        xlogy(static_cast<double>(y[1]), e[1]) - log_factorial(y[1]);
    worst = std::max(worst, std::abs(log_joint_count_density(b, y, e, pref) - brute));
  }
  out.check(worst <= 1e-8, fmt::format("y = 50 log error {:.2g}", worst));
  out.note(fmt::format("y = 500 gives {:.6g}; y = 50 max log error {:.2g}", big, worst));
  return out;
}

Outcome shrinkage() {
  Outcome out;
  auto data = desk_panel(CaseTag::A);
  GroupObservations empty;
  empty.group_id = "unexposed";
  data.groups.push_back(empty);
  const auto fit = em_fit_independent_gamma(data);
  std::size_t outside = 0;
  for (std::size_t g = 0; g + 1 < data.groups.size(); ++g) {
    const auto s = weighted_exposure_sums(data.groups[g], fit.betas);
    for (std::size_t j = 0; j < 2; ++j) {
      if (s.e[j] == 0.0) continue;
      const double raw = static_cast<double>(s.y[j]) / s.e[j];
      const double m = fit.group_posteriors[g].theta[j];
      if (!(m >= std::min(raw, 1.0) && m <= std::max(raw, 1.0))) ++outside;
    }
  }
  out.check(outside == 0, fmt::format("{} posterior means outside [raw, 1]", outside));
  const auto& last = fit.group_posteriors.back().theta;
  out.check(last[0] == 1.0 && last[1] == 1.0, "unexposed simple-model posterior is not the prior mean");
  // Same for the other shrinkage priors.
  const HierPrior hp{1.7, 0.6};
  const std::vector<std::int64_t> y0{0, 0};
  const std::vector<double> e0{0.0, 0.0};
  const auto hs = estep_hier(y0, e0, hp);
  out.check(std::abs(hs.theta0 - hp.eta / hp.nu) <= 1e-14 && std::abs(hs.theta[0] - 1.0) <= 1e-14,
            "unexposed hierarchical posterior is not the prior");
  const auto b = coupled();
  const auto gp = ph_group_posterior(b, {0, 0}, {0.0, 0.0});
  out.check(std::abs(gp.mean[0] - ph_mean(first_marginal(b))) <= 1e-12 &&
                std::abs(gp.mean[1] - ph_mean(second_marginal(b))) <= 1e-12,
            "unexposed phase-type posterior is not the prior");
  out.note(fmt::format("{} groups checked", data.groups.size() - 1));
  return out;
}

Outcome thiele() {
  Outcome out;
  const auto constant = [](double c) -> RateFunction { return [c](double) { return c; }; };
  {
    ProductSpec p;
    p.horizon = p.coverage = 10.0;
    p.interest = constant(0.03);
    const auto grid = solve_thiele(p, {constant(0.0), constant(0.0), constant(0.0), constant(0.0)});
    const double err = std::abs(grid.invalid.front() - (1.0 - std::exp(-0.3)) / 0.03);
    out.check(err <= 1e-6, fmt::format("annuity certain error {:.2g}", err));
    out.note(fmt::format("annuity certain error {:.2g}", err));
  }
  {
    const double ai = 0.004, ia = 0.3, ad = 0.002, id = 0.01, r = 0.01, T = 30.0;
    double worst = 0.0;
    for (double tau : {3.0, 50.0}) {
      ProductSpec p;
      p.horizon = T;
      p.coverage = tau;
      p.interest = constant(r);
      const double v = solve_thiele(p, {constant(ai), constant(ia), constant(ad), constant(id)}).premium();
      const double k = r + id + ia, tc = std::min(tau, T);
      Eigen::Matrix2d A;
      A << r + ad + ai, -ai, -ia, r + id + ia;
      const Eigen::Vector2d fixed = A.partialPivLu().solve(Eigen::Vector2d(0.0, 1.0));
      const Eigen::Vector2d v_tau(0.0, (1.0 - std::exp(-k * (T - tc))) / k);
      const double oracle = (fixed + matrix_exponential(-A * tc) * (v_tau - fixed))(0);
      worst = std::max(worst, std::abs(v / oracle - 1.0));
    }
    out.check(worst <= 1e-6, fmt::format("matrix exponential relative error {:.2g}", worst));
    out.note(fmt::format("matrix exponential relative error {:.2g}", worst));
  }
  {
    const TransitionRates tr;
    double min_order = 1e9;
    for (double x : {20.0, 35.0, 50.0, 62.0}) {
      ContractRates rates{[&](double t) { return 3.0 * tr.ai(x + t); }, [&](double t) { return tr.ia(x + t); },
                          [&](double t) { return TransitionRates::ad(x + t); },
                          [&](double t) { return TransitionRates::id(x + t); }};
      ProductSpec p;
      p.horizon = 67.0 - x;
      std::vector<double> v;
      for (double h : {1.0 / 2, 1.0 / 4, 1.0 / 8, 1.0 / 16}) v.push_back(solve_thiele(p, rates, h).premium());
      for (std::size_t k = 2; k < v.size(); ++k)
        min_order = std::min(min_order, std::log2((v[k - 2] - v[k - 1]) / (v[k - 1] - v[k])));
    }
    out.check(min_order >= 4.0, fmt::format("observed order {:.3f}", min_order));
    out.note(fmt::format("smallest observed order {:.3f}", min_order));
  }
  {
    double slowest = 0.0;
    for (double x : {20.0, 40.0, 60.0}) {
      const auto t0 = std::chrono::steady_clock::now();
      const double v = premium_at_integer_age(x, {1.3, 0.7}, true_betas());
      slowest = std::max(slowest, seconds_since(t0));
      out.check(std::isfinite(v) && v > 0.0, "premium not positive");
    }
    out.check(slowest < 1.0, fmt::format("solve took {:.3f} s", slowest));
    out.note(fmt::format("slowest monthly solve {:.4f} s", slowest));
  }
  return out;
}

Outcome study_ordering() {
  Outcome out;
  const StudyConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = run_scenario(cfg);
  const double secs = seconds_since(t0);
  std::map<std::string, int> a_count, b_count, c_count, d_count;
  for (auto c : cfg.cases) {
    const auto tag = case_name(c);
    for (int rep = 0; rep < cfg.replications; ++rep) {
      auto get = [&](const std::string& m) { return report.find(c, m, rep); };
      const auto *st = get("standard"), *fx = get("fixed"), *si = get("simple"), *hi = get("hierarchical"),
                 *ph = get("phasetype");
      bool ordered = st && fx && st->rmse > fx->rmse;
      for (const std::string m : {"simple", "hierarchical", "phasetype"})
        if (cfg.applies(m, c)) ordered = ordered && get(m) && fx->rmse > get(m)->rmse;
      a_count[tag] += ordered;
      if (c == CaseTag::B && si && hi && ph) b_count[tag] += std::max(hi->loglik, ph->loglik) > si->loglik;
      if (c == CaseTag::C && si && ph) {
        c_count[tag] += ph->loglik > si->loglik;
        d_count[tag] += ph->posterior_tau < 0.0;
      }
    }
  }
  std::size_t failed_records = 0;
  for (const auto& r : report.records) failed_records += r.status != "ok";
  out.check(failed_records == 0, fmt::format("{} fits or pricings failed", failed_records));
  std::string a_line = "(a) RMSE ordering per case:";
  for (auto c : cfg.cases) {
    const auto tag = case_name(c);
    a_line += fmt::format(" {} {}/{}", tag, a_count[tag], cfg.replications);
    out.check(a_count[tag] >= 8, fmt::format("(a) case {} ordering in {}/{}", tag, a_count[tag], cfg.replications));
  }
  out.note(a_line);
  out.check(b_count["B"] >= 8, fmt::format("(b) {}/{}", b_count["B"], cfg.replications));
  out.check(c_count["C"] >= 8, fmt::format("(c) {}/{}", c_count["C"], cfg.replications));
  out.check(d_count["C"] >= 8, fmt::format("(d) {}/{}", d_count["C"], cfg.replications));
  out.note(fmt::format("(b) {}/{}, (c) {}/{}, (d) {}/{}", b_count["B"], cfg.replications, c_count["C"],
                       cfg.replications, d_count["C"], cfg.replications));
  // Mean RMSE per case and model, for context.
  for (auto c : cfg.cases) {
    std::string line = fmt::format("mean RMSE case {}:", case_name(c));
    for (const auto& m : cfg.models) {
      if (!cfg.applies(m, c)) continue;
      double s = 0.0;
      for (int rep = 0; rep < cfg.replications; ++rep)
        if (const auto* r = report.find(c, m, rep)) s += r->rmse;
      line += fmt::format(" {} {:.3f}", m, s / cfg.replications);
    }
    out.note(line);
  }
  out.check(secs < 4.0 * 3600.0, "runtime over 4 h");
  out.note(fmt::format("study runtime {:.1f} s", secs));
  return out;
}

Outcome calibration() {
  Outcome out;
  for (auto c : {CaseTag::A, CaseTag::B, CaseTag::C}) {
    auto cfg = ScenarioConfig::for_case(c, 20240101);
    cfg.n_groups = 100000;
    cfg.total_insured = 100000;
    Rng rng = make_rng(cfg.seed, {99});
    const auto eff = sample_group_effects(cfg, rng);
    std::vector<double> x, y;
    for (const auto& e : eff) {
      x.push_back(e[0]);
      y.push_back(e[1]);
    }
    const double tau = kendall_tau(x, y);
    out.check(std::abs(tau - cfg.kendall_tau) <= 0.02, fmt::format("case {} tau {:.4f}", case_name(c), tau));
    std::string line = fmt::format("case {}: tau {:.4f} (target {:.1f})", case_name(c), tau, cfg.kendall_tau);
    for (const auto* v : {&x, &y}) {
      const double n = static_cast<double>(v->size());
      const double m = std::accumulate(v->begin(), v->end(), 0.0) / n;
      double ss = 0.0;
      for (double t : *v) ss += (t - m) * (t - m);
      const double se = std::sqrt(ss / (n - 1.0) / n);
      out.check(std::abs(m - 1.0) <= 3.0 * se, fmt::format("case {} mean {:.5f} se {:.5f}", case_name(c), m, se));
      line += fmt::format(", mean {:.4f} (se {:.4f})", m, se);
    }
    out.note(line);
  }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Outcome out;
  const auto base = std::filesystem::temp_directory_path() / fmt::format("mixpois_acceptance_{}", std::chrono::steady_clock::now().time_since_epoch().count());
  std::filesystem::remove_all(base);
  std::array<std::filesystem::path, 2> dirs{base / "run1", base / "run2"};
  for (const auto& d : dirs) {
    const auto cmd = fmt::format("\"{}\" study --seed 777 --replications 2 --out \"{}\"", MIXPOIS_CLI_PATH, d.string());
    const int rc = std::system(cmd.c_str());
    out.check(rc == 0, fmt::format("study exited with {}", rc));
  }
  for (const char* f : {"loglik.csv", "premium_errors.csv", "effects_scatter.csv"}) {
    const auto a = slurp(dirs[0] / f), b = slurp(dirs[1] / f);
    out.check(!a.empty() && a == b, fmt::format("{} differs between runs", f));
    out.note(fmt::format("{}: {} bytes", f, a.size()));
  }
  std::filesystem::remove_all(base);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
      {"EM/ECM monotonicity", monotonicity},     {"oracle equivalences", oracles},
      {"recurrence correctness", recurrence},    {"numerical stability", stability},
      {"shrinkage property", shrinkage},         {"Thiele solver", thiele},
      {"study ordering", study_ordering},        {"copula calibration", calibration},
      {"determinism", determinism}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all_pass = true;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    all_pass = all_pass && o.pass;
    std::cout << fmt::format("{} criterion {}: {}", o.pass ? "PASS" : "FAIL", id, criteria[k].first) << "\n";
    for (const auto& n : o.notes) std::cout << "    " << n << "\n";
    std::cout.flush();
  }
  return all_pass ? 0 : 1;
}
