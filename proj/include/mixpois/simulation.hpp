#pragma once

// Portfolio generator: group sizes, entry ages, copula-coupled group
// effects and paths of the active/invalid/dead chain, aggregated into
// yearly occurrence-exposure cells.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>

#include "mixpois/errors.hpp"
#include "mixpois/model.hpp"
#include "mixpois/random.hpp"

namespace mixpois {

enum class CaseTag { A, B, C };

inline std::string case_name(CaseTag c) { return c == CaseTag::A ? "A" : c == CaseTag::B ? "B" : "C"; }

inline CaseTag parse_case(const std::string& s) {
  if (s == "A") return CaseTag::A;
  if (s == "B") return CaseTag::B;
  if (s == "C") return CaseTag::C;
  throw ConfigError("unknown case '" + s + "' (expected A, B or C)");
}

/// Marginal law of a group effect.
enum class EffectMarginal { gamma_10_3, scaled_mixture };

struct ScenarioConfig {
  CaseTag case_tag = CaseTag::A;
  int n_groups = 100;
  std::int64_t total_insured = 50000;
  double coverage_years = 3.0;
  double min_age = 20.0;
  double terminal_age = 67.0;
  double kendall_tau = 0.0;
  EffectMarginal marginal = EffectMarginal::gamma_10_3;
  std::array<double, 3> age_weights{0.25, 0.35, 0.40};  // Weibull, Normal, Gompertz
  std::uint64_t seed = 20240101;

  static ScenarioConfig for_case(CaseTag c, std::uint64_t seed = 20240101) {
    ScenarioConfig cfg;
    cfg.case_tag = c;
    cfg.seed = seed;
    cfg.kendall_tau = c == CaseTag::A ? 0.0 : c == CaseTag::B ? 0.5 : -0.5;
    cfg.marginal = c == CaseTag::A ? EffectMarginal::gamma_10_3 : EffectMarginal::scaled_mixture;
    return cfg;
  }

  void validate() const {
    if (n_groups < 1) throw ConfigError("n_groups must be at least 1");
    if (total_insured < n_groups) throw ConfigError("total_insured must be at least n_groups");
    if (!(coverage_years > 0.0)) throw ConfigError("coverage_years must be positive");
    if (!(min_age < terminal_age)) throw ConfigError("min_age must be below terminal_age");
    if (!(kendall_tau > -1.0 && kendall_tau < 1.0)) throw ConfigError("kendall_tau must lie in (-1, 1)");
  }
};

// ---------------------------------------------------------------------------
// Transition rates

struct TransitionRates {
  Betas baseline = true_betas();

  double ai(double t) const { return std::exp(baseline[0](0) + t * (baseline[0](1) + t * baseline[0](2))); }
  double ia(double t) const { return std::exp(baseline[1](0) + t * baseline[1](1)); }
  static double ad(double t) { return 0.0005 + std::pow(10.0, 5.88 + 0.038 * t - 10.0); }
  static double id(double t) { return std::exp(-7.25 + 0.07 * t); }
};

// ---------------------------------------------------------------------------
// Group sizes, entry ages, effects

/// Gamma(0.05, rate 1e-4) draws, rescaled to the portfolio total. Every group
/// keeps at least one insured; the rest is split by largest remainder.
inline std::vector<std::int64_t> sample_group_sizes(const ScenarioConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto G = static_cast<std::size_t>(cfg.n_groups);
  std::vector<double> raw(G);
  for (auto& r : raw) r = std::ceil(boost::math::gamma_p_inv(0.05, uniform01(rng)) / 1e-4);
  double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  if (!(total > 0.0)) {
    std::fill(raw.begin(), raw.end(), 1.0);
    total = static_cast<double>(G);
  }
  const auto spare = cfg.total_insured - static_cast<std::int64_t>(G);
  std::vector<std::int64_t> sizes(G, 1);
  std::vector<std::pair<double, std::size_t>> remainders(G);
  std::int64_t assigned = 0;
  for (std::size_t g = 0; g < G; ++g) {
    const double share = static_cast<double>(spare) * raw[g] / total;
    const auto whole = static_cast<std::int64_t>(std::floor(share));
    sizes[g] += whole;
    assigned += whole;
    remainders[g] = {share - static_cast<double>(whole), g};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::int64_t k = 0; k < spare - assigned; ++k) ++sizes[remainders[static_cast<std::size_t>(k)].second];
  return sizes;
}

/// One entry age from the Weibull/Normal/Gompertz mixture restricted to
/// [lo, hi]; out-of-range draws are discarded and the component is drawn
/// again.
inline double sample_entry_age(Rng& rng, const std::array<double, 3>& weights, double lo, double hi) {
  const double wsum = weights[0] + weights[1] + weights[2];
  static const boost::math::normal_distribution<double> normal(47.0, 7.0);
  for (int attempt = 0; attempt < 1'000'000; ++attempt) {
    const double pick = uniform01(rng) * wsum;
    const double u = uniform01(rng);
    double x;
    if (pick < weights[0]) {
      x = 15.0 * std::pow(-std::log1p(-u), 1.0 / 3.0);  // Weibull(shape 3, scale 15)
    } else if (pick < weights[0] + weights[1]) {
      x = boost::math::quantile(normal, u);
    } else {
      constexpr double a = 0.1, b = 0.002;  // Gompertz(shape a, rate b)
      x = std::log1p(-(a / b) * std::log1p(-u)) / a;
    }
    if (x >= lo && x <= hi) return x;
  }
  throw NumericalBreakdown("entry-age rejection sampler did not terminate");
}

inline std::vector<double> sample_entry_ages(std::size_t n, Rng& rng, const std::array<double, 3>& weights = {0.25, 0.35, 0.40},
                                             double lo = 20.0, double hi = 67.0) {
  std::vector<double> out(n);
  for (auto& x : out) x = sample_entry_age(rng, weights, lo, hi);
  return out;
}

/// Clayton pair by conditional inversion; theta = 2 tau / (1 - tau). Negative
/// theta (down to -1) is handled by the same formula.
inline std::array<double, 2> sample_clayton_pair(double kendall_tau, Rng& rng) {
  if (!(kendall_tau > -1.0 && kendall_tau < 1.0)) throw ParameterError("kendall_tau must lie in (-1, 1)");
  const double u = uniform01(rng), w = uniform01(rng);
  if (kendall_tau == 0.0) return {u, w};
  const double th = 2.0 * kendall_tau / (1.0 - kendall_tau);
  const double v = std::pow((std::pow(w, -th / (1.0 + th)) - 1.0) * std::pow(u, -th) + 1.0, -1.0 / th);
  return {u, std::clamp(v, 1e-300, 1.0)};
}

/// Quantile of the marginal effect distribution.
inline double effect_quantile(EffectMarginal m, double u) {
  if (m == EffectMarginal::gamma_10_3) {
    constexpr double a = 10.0 / 3.0;
    return boost::math::gamma_p_inv(a, u) / a;
  }
  // 0.85 Gamma(5, rate 2) + 0.15 Gamma(2, rate 6), divided by its mean 2.175.
  const auto cdf = [u](double x) {
    return 0.85 * boost::math::gamma_p(5.0, 2.0 * x) + 0.15 * boost::math::gamma_p(2.0, 6.0 * x) - u;
  };
  double hi = 1.0;
  while (cdf(hi) < 0.0) hi *= 2.0;
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::toms748_solve(cdf, 0.0, hi, -u, cdf(hi), boost::math::tools::eps_tolerance<double>(50),
                                                   iters);
  return 0.5 * (r.first + r.second) / 2.175;
}

inline std::vector<std::array<double, 2>> sample_group_effects(const ScenarioConfig& cfg, Rng& rng) {
  std::vector<std::array<double, 2>> out(static_cast<std::size_t>(cfg.n_groups));
  for (auto& th : out) {
    const auto uv = sample_clayton_pair(cfg.kendall_tau, rng);
    th = {effect_quantile(cfg.marginal, uv[0]), effect_quantile(cfg.marginal, uv[1])};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paths

enum class State { active, invalid, dead };
enum class Transition { ai, ia, ad, id };

struct PathEvent {
  double age;
  Transition transition;
};

struct SimulatedPath {
  double entry_age = 0.0;
  std::vector<PathEvent> events;
  double termination_age = 0.0;
  State final_state = State::active;
};

/// Competing-risks path by thinning against a constant bound per span of at
/// most one year. Active lives leave at contract time `coverage_years`;
/// invalid lives stay until recovery, death or the terminal age, and a
/// recovery after the coverage period ends observation.
inline SimulatedPath simulate_path(double entry_age, const std::array<double, 2>& theta, const ScenarioConfig& cfg,
                                   const TransitionRates& rates, Rng& rng) {
  if (!(entry_age >= cfg.min_age && entry_age <= cfg.terminal_age))
    throw ParameterError(fmt::format("entry age {} outside [{}, {}]", entry_age, cfg.min_age, cfg.terminal_age));
  SimulatedPath path;
  path.entry_age = entry_age;
  const double cover_end = std::min(entry_age + cfg.coverage_years, cfg.terminal_age);
  State state = State::active;
  double t = entry_age;

  auto hazards = [&](State s, double age) -> std::array<double, 2> {
    if (s == State::active) return {theta[0] * rates.ai(age), TransitionRates::ad(age)};
    return {theta[1] * rates.ia(age), TransitionRates::id(age)};
  };

  while (true) {
    const double horizon = state == State::active ? cover_end : cfg.terminal_age;
    if (t >= horizon) break;
    const double span_end = std::min(std::floor(t) + 1.0, horizon);
    const auto h0 = hazards(state, t), h1 = hazards(state, span_end);
    double bound = std::max(h0[0], h1[0]) + std::max(h0[1], h1[1]);
    if (state == State::active) {
      // A concave exponent peaks inside the span at its vertex.
      const double c2 = rates.baseline[0](2);
      if (c2 < 0.0) {
        const double v = -rates.baseline[0](1) / (2.0 * c2);
        if (v > t && v < span_end) bound = std::max(h0[0], theta[0] * rates.ai(v)) + std::max(h0[1], h1[1]);
      }
    }
    bound *= 1.0 + 1e-12;
    if (!(bound > 0.0)) {
      t = span_end;
      continue;
    }
    const double cand = t + exponential(rng, bound);
    if (cand >= span_end) {
      t = span_end;
      continue;
    }
    t = cand;
    const auto h = hazards(state, t);
    const double u = uniform01(rng) * bound;
    if (u >= h[0] + h[1]) continue;  // rejected
    const bool first = u < h[0];
    if (state == State::active) {
      path.events.push_back({t, first ? Transition::ai : Transition::ad});
      state = first ? State::invalid : State::dead;
    } else {
      path.events.push_back({t, first ? Transition::ia : Transition::id});
      state = first ? State::active : State::dead;
      if (first && t - entry_age >= cfg.coverage_years) break;  // recovered after coverage
    }
    if (state == State::dead) break;
  }
  path.termination_age = t;
  path.final_state = state;
  return path;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Integer-age grid min_age, min_age+1, ..., terminal_age.
inline std::vector<double> yearly_grid(double lo = 20.0, double hi = 67.0) {
  std::vector<double> g;
  for (double a = lo; a <= hi + 1e-9; a += 1.0) g.push_back(a);
  return g;
}

/// Adds time spent in [from, to) to the interval cells, and records the
/// event (if any) in the interval (t_{k-1}, t_k] containing its age.
struct CellAccumulator {
  std::vector<double> grid;
  std::array<std::vector<double>, 2> exposure;
  std::array<std::vector<std::int64_t>, 2> count;

  explicit CellAccumulator(std::vector<double> g) : grid(std::move(g)) {
    for (std::size_t j = 0; j < 2; ++j) {
      exposure[j].assign(grid.size() - 1, 0.0);
      count[j].assign(grid.size() - 1, 0);
    }
  }

  /// Interval index k (0-based) with grid[k] < age <= grid[k+1]; the left
  /// grid end belongs to the first interval.
  std::size_t interval_of(double age) const {
    if (age < grid.front() || age > grid.back())
      throw DataError(fmt::format("age {} outside aggregation grid [{}, {}]", age, grid.front(), grid.back()));
    const auto it = std::lower_bound(grid.begin() + 1, grid.end(), age);
    return static_cast<std::size_t>(it - grid.begin()) - 1;
  }

  void add_time(std::size_t j, double from, double to) {
    if (!(to > from)) return;
    if (from < grid.front() - 1e-9 || to > grid.back() + 1e-9)
      throw DataError(fmt::format("sojourn [{}, {}] outside aggregation grid", from, to));
    for (std::size_t k = interval_of(std::max(from, grid.front())); k + 1 < grid.size() && grid[k] < to; ++k) {
      const double lo = std::max(from, grid[k]), hi = std::min(to, grid[k + 1]);
      if (hi > lo) exposure[j][k] += hi - lo;
    }
  }

  void add_path(const SimulatedPath& p) {
    double t = p.entry_age;
    State s = State::active;
    for (const auto& e : p.events) {
      add_time(s == State::active ? 0 : 1, t, e.age);
      if (e.transition == Transition::ai) ++count[0][interval_of(e.age)];
      if (e.transition == Transition::ia) ++count[1][interval_of(e.age)];
      s = e.transition == Transition::ai ? State::invalid : e.transition == Transition::ia ? State::active : State::dead;
      t = e.age;
    }
    if (s != State::dead) add_time(s == State::active ? 0 : 1, t, p.termination_age);
  }
};

/// Time under observation of a path: sum of its active and invalid sojourns.
inline double observed_time(const SimulatedPath& p) {
  if (!p.events.empty() && (p.events.back().transition == Transition::ad || p.events.back().transition == Transition::id))
    return p.events.back().age - p.entry_age;
  return p.termination_age - p.entry_age;
}

inline GroupObservations cells_from_accumulator(const CellAccumulator& acc, std::string group_id,
                                                CovariateAnchor anchor = CovariateAnchor::right_endpoint) {
  GroupObservations g;
  g.group_id = std::move(group_id);
  for (auto c : kCharacteristics) {
    const auto j = index(c);
    for (std::size_t k = 0; k + 1 < acc.grid.size(); ++k) {
      if (!(acc.exposure[j][k] > 0.0)) continue;
      ObservationCell cell;
      cell.interval = static_cast<int>(k + 1);
      cell.t_right = acc.grid[k + 1];
      cell.exposure = acc.exposure[j][k];
      cell.count = acc.count[j][k];
      const double age = anchor == CovariateAnchor::right_endpoint ? cell.t_right : 0.5 * (acc.grid[k] + acc.grid[k + 1]);
      cell.covariates = basis_row(c, age);
      g.of(c).push_back(std::move(cell));
    }
  }
  return g;
}

inline PortfolioDataset aggregate_panel(const std::vector<std::vector<SimulatedPath>>& paths,
                                        const std::vector<std::string>& group_ids, const std::vector<double>& grid,
                                        CovariateAnchor anchor = CovariateAnchor::right_endpoint) {
  if (paths.size() != group_ids.size()) throw ConfigError("aggregate_panel: one id per group required");
  PortfolioDataset data;
  data.grid = grid;
  for (std::size_t g = 0; g < paths.size(); ++g) {
    CellAccumulator acc(grid);
    for (const auto& p : paths[g]) acc.add_path(p);
    data.groups.push_back(cells_from_accumulator(acc, group_ids[g], anchor));
  }
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Portfolio: the parts that stay fixed across replications.

struct Portfolio {
  ScenarioConfig config;
  std::vector<std::string> group_ids;
  std::vector<std::int64_t> sizes;
  std::vector<std::vector<double>> entry_ages;
  std::vector<std::array<double, 2>> effects;
};

namespace stream {
inline constexpr std::uint64_t sizes = 1, ages = 2, effects = 3, paths = 4;
}

inline std::string group_label(std::size_t g) { return fmt::format("g{:03d}", g + 1); }

inline Portfolio make_portfolio(const ScenarioConfig& cfg) {
  cfg.validate();
  Portfolio p;
  p.config = cfg;
  const auto tag = static_cast<std::uint64_t>(cfg.case_tag);
  Rng size_rng = make_rng(cfg.seed, {tag, stream::sizes});
  p.sizes = sample_group_sizes(cfg, size_rng);
  Rng effect_rng = make_rng(cfg.seed, {tag, stream::effects});
  p.effects = sample_group_effects(cfg, effect_rng);
  for (std::size_t g = 0; g < p.sizes.size(); ++g) {
    p.group_ids.push_back(group_label(g));
    Rng age_rng = make_rng(cfg.seed, {tag, stream::ages, g});
    p.entry_ages.push_back(sample_entry_ages(static_cast<std::size_t>(p.sizes[g]), age_rng, cfg.age_weights,
                                             cfg.min_age, cfg.terminal_age));
  }
  return p;
}

/// Simulates every insured of the portfolio once; each path has its own
/// stream keyed by (case, replication, group, insured).
inline std::vector<std::vector<SimulatedPath>> simulate_paths(const Portfolio& p, std::uint64_t replication,
                                                              const TransitionRates& rates = {}) {
  const auto tag = static_cast<std::uint64_t>(p.config.case_tag);
  std::vector<std::vector<SimulatedPath>> out(p.sizes.size());
  for (std::size_t g = 0; g < p.sizes.size(); ++g) {
    out[g].reserve(p.entry_ages[g].size());
    for (std::size_t i = 0; i < p.entry_ages[g].size(); ++i) {
      Rng rng = make_rng(p.config.seed, {tag, stream::paths, replication, g, i});
      out[g].push_back(simulate_path(p.entry_ages[g][i], p.effects[g], p.config, rates, rng));
    }
  }
  return out;
}

inline PortfolioDataset simulate_panel(const Portfolio& p, std::uint64_t replication,
                                       CovariateAnchor anchor = CovariateAnchor::right_endpoint) {
  return aggregate_panel(simulate_paths(p, replication), p.group_ids, yearly_grid(p.config.min_age, p.config.terminal_age),
                         anchor);
}

inline std::string format_effects_csv(const std::vector<std::string>& ids, const std::vector<std::array<double, 2>>& effects) {
  std::string out = "group_id,theta_ai,theta_ia\n";
  for (std::size_t g = 0; g < ids.size(); ++g) out += fmt::format("{},{:.17g},{:.17g}\n", ids[g], effects[g][0], effects[g][1]);
  return out;
}

}  // namespace mixpois
