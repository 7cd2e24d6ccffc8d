#pragma once

// Prospective reserves of the disability product by backward RK4 on
// Thiele's equations, and equivalence premiums for a portfolio.
//
// Time is contract time t in [0, T]. A disability at time s is covered when
// s <= tau; the annuity b_i is paid while invalid once the waiting period
// eps has elapsed since the disability. With eps = 0 the invalid reserve
// does not depend on s and the system is two-dimensional (V_a, W_i).

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "mixpois/errors.hpp"
#include "mixpois/model.hpp"
#include "mixpois/simulation.hpp"

namespace mixpois {

using RateFunction = std::function<double(double)>;

struct ProductSpec {
  double waiting = 0.0;   // eps
  double coverage = 3.0;  // tau; infinity allowed
  RateFunction annuity = [](double) { return 1.0; };   // b_i(t)
  RateFunction lump_sum = [](double) { return 0.0; };  // b_ai(t)
  double horizon = 1.0;   // T
  RateFunction interest = [](double) { return 0.01; };
};

/// Transition intensities as functions of contract time.
struct ContractRates {
  RateFunction ai, ia, ad, id;
};

struct ThieleGrid {
  std::vector<double> times;                  // 0 = t_0 < ... < t_n = T
  std::vector<double> active;                 // V_a(t_k)
  std::vector<double> invalid;                // W_i(t_k) (eps = 0)
  std::vector<double> durations;              // s lines (eps > 0)
  std::vector<std::vector<double>> lattice;   // lattice[m][k] = V_i(t_k, s_m)

  double premium() const { return active.front(); }
};

namespace detail {

inline std::vector<double> backward_times(double T, double step) {
  const auto n = static_cast<std::size_t>(std::ceil(T / step - 1e-9));
  std::vector<double> t(n + 1);
  for (std::size_t k = 0; k <= n; ++k) t[k] = std::min(T, static_cast<double>(k) * step);
  t.back() = T;
  return t;
}

/// Classic RK4 from t1 down to t0 for dy/dt = f(t, y, mid) where `mid` is
/// the step midpoint used for indicator terms.
template <class F>
std::vector<double> rk4_back(const F& f, double t1, double t0, const std::vector<double>& y1) {
  const double h = t0 - t1;  // negative
  const double mid = 0.5 * (t0 + t1);
  auto axpy = [](const std::vector<double>& y, double a, const std::vector<double>& k) {
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + a * k[i];
    return out;
  };
  const auto k1 = f(t1, y1, mid);
  const auto k2 = f(t1 + 0.5 * h, axpy(y1, 0.5 * h, k1), mid);
  const auto k3 = f(t1 + 0.5 * h, axpy(y1, 0.5 * h, k2), mid);
  const auto k4 = f(t0, axpy(y1, h, k3), mid);
  std::vector<double> y0(y1.size());
  for (std::size_t i = 0; i < y1.size(); ++i) y0[i] = y1[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return y0;
}

}  // namespace detail

/// Solves the reserve equations backward from V(T) = 0 with the given step
/// (one month by default).
inline ThieleGrid solve_thiele(const ProductSpec& product, const ContractRates& rates, double step = 1.0 / 12.0) {
  if (!(step > 0.0)) throw ParameterError("solve_thiele: step must be positive");
  if (!(product.horizon >= 0.0) || !std::isfinite(product.horizon)) throw ParameterError("solve_thiele: invalid horizon");
  if (product.waiting < 0.0) throw ParameterError("solve_thiele: negative waiting period");
  ThieleGrid grid;
  grid.times = detail::backward_times(product.horizon, step);
  const std::size_t n = grid.times.size();
  const double tau = product.coverage;

  if (product.waiting == 0.0) {
    // y = (V_a, W_i)
    auto f = [&](double t, const std::vector<double>& y, double mid) {
      const double r = product.interest(t);
      const double covered = mid <= tau ? 1.0 : 0.0;
      const double mai = rates.ai(t), mia = rates.ia(t), mad = rates.ad(t), mid_ = rates.id(t);
      return std::vector<double>{
          (r + mad) * y[0] - covered * (product.lump_sum(t) + y[1] - y[0]) * mai,
          (r + mid_) * y[1] - product.annuity(t) - (y[0] - y[1]) * mia,
      };
    };
    grid.active.assign(n, 0.0);
    grid.invalid.assign(n, 0.0);
    std::vector<double> y{0.0, 0.0};
    for (std::size_t k = n - 1; k > 0; --k) {
      y = detail::rk4_back(f, grid.times[k], grid.times[k - 1], y);
      grid.active[k - 1] = y[0];
      grid.invalid[k - 1] = y[1];
    }
    return grid;
  }

  // Duration lines s_m on the time grid up to min(tau, T); V_i(t, s) for s
  // beyond the last line is zero (uncovered), and V_i(t, t) is interpolated
  // linearly between neighbouring lines.
  for (double s : grid.times)
    if (s <= tau + 1e-12) grid.durations.push_back(s);
  const std::size_t M = grid.durations.size();
  auto diagonal = [&](double t, const std::vector<double>& y) {
    if (t > grid.durations.back() + 1e-12) return 0.0;
    const auto it = std::upper_bound(grid.durations.begin(), grid.durations.end(), t);
    const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - grid.durations.begin()), M - 1);
    const std::size_t lo = hi == 0 ? 0 : hi - 1;
    if (lo == hi) return y[1 + lo];
    const double w = (t - grid.durations[lo]) / (grid.durations[hi] - grid.durations[lo]);
    return (1.0 - w) * y[1 + lo] + w * y[1 + hi];
  };
  auto f = [&](double t, const std::vector<double>& y, double mid) {
    const double r = product.interest(t);
    const double mai = rates.ai(t), mia = rates.ia(t), mad = rates.ad(t), mid_ = rates.id(t);
    std::vector<double> d(1 + M);
    const double covered = mid <= tau ? 1.0 : 0.0;
    d[0] = (r + mad) * y[0] - covered * (product.lump_sum(t) + diagonal(t, y) - y[0]) * mai;
    for (std::size_t m = 0; m < M; ++m) {
      const double paying = mid - grid.durations[m] >= product.waiting ? 1.0 : 0.0;
      d[1 + m] = (r + mid_) * y[1 + m] - paying * product.annuity(t) - (y[0] - y[1 + m]) * mia;
    }
    return d;
  };
  grid.active.assign(n, 0.0);
  grid.lattice.assign(M, std::vector<double>(n, 0.0));
  std::vector<double> y(1 + M, 0.0);
  for (std::size_t k = n - 1; k > 0; --k) {
    y = detail::rk4_back(f, grid.times[k], grid.times[k - 1], y);
    grid.active[k - 1] = y[0];
    for (std::size_t m = 0; m < M; ++m) grid.lattice[m][k - 1] = y[1 + m];
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Study premiums

struct PremiumProduct {
  double coverage = 3.0;
  double terminal_age = 67.0;
  double interest = 0.01;
  double step = 1.0 / 12.0;
};

/// Single premium at integer issue age x for a group with effects theta and
/// baseline coefficients beta.
inline double premium_at_integer_age(double x, const std::array<double, 2>& theta, const Betas& beta,
                                     const PremiumProduct& prod = {}) {
  const double T = prod.terminal_age - x;
  if (T <= 0.0) return 0.0;
  const TransitionRates tr{beta};
  ContractRates rates;
  rates.ai = [&](double t) { return theta[0] * tr.ai(x + t); };
  rates.ia = [&](double t) { return theta[1] * tr.ia(x + t); };
  rates.ad = [x](double t) { return TransitionRates::ad(x + t); };
  rates.id = [x](double t) { return TransitionRates::id(x + t); };
  ProductSpec spec;
  spec.coverage = prod.coverage;
  spec.horizon = T;
  const double r = prod.interest;
  spec.interest = [r](double) { return r; };
  return solve_thiele(spec, rates, prod.step).premium();
}

/// Premium curve on integer ages, interpolated linearly in between.
class PremiumCurve {
 public:
  PremiumCurve(std::array<double, 2> theta, Betas beta, PremiumProduct prod = {}, double min_age = 20.0)
      : theta_(theta), beta_(std::move(beta)), prod_(prod), min_age_(min_age) {}

  double nodal(int age) {
    auto it = cache_.find(age);
    if (it == cache_.end())
      it = cache_.emplace(age, premium_at_integer_age(static_cast<double>(age), theta_, beta_, prod_)).first;
    return it->second;
  }

  double operator()(double age) {
    if (!(age >= min_age_ && age <= prod_.terminal_age))
      throw ParameterError(fmt::format("issue age {} outside [{}, {}]", age, min_age_, prod_.terminal_age));
    const double lo = std::floor(age);
    const double w = age - lo;
    const double p_lo = nodal(static_cast<int>(lo));
    if (w == 0.0) return p_lo;
    return (1.0 - w) * p_lo + w * nodal(static_cast<int>(lo) + 1);
  }

 private:
  std::array<double, 2> theta_;
  Betas beta_;
  PremiumProduct prod_;
  double min_age_;
  std::map<int, double> cache_;
};

/// Per-insured premiums: premiums[g][i] for entry age ages[g][i] under the
/// group's effects and the given baselines.
inline std::vector<std::vector<double>> portfolio_premiums(const std::vector<std::vector<double>>& ages,
                                                           const std::vector<std::array<double, 2>>& effects,
                                                           const Betas& beta, const PremiumProduct& prod = {}) {
  if (ages.size() != effects.size()) throw ConfigError("portfolio_premiums: one effect pair per group required");
  std::vector<std::vector<double>> out(ages.size());
  for (std::size_t g = 0; g < ages.size(); ++g) {
    if (effects[g][0] < 0.0 || effects[g][1] < 0.0 || !std::isfinite(effects[g][0]) || !std::isfinite(effects[g][1]))
      throw ParameterError("portfolio_premiums: effects must be finite and nonnegative");
    PremiumCurve curve(effects[g], beta, prod);
    out[g].reserve(ages[g].size());
    for (double a : ages[g]) out[g].push_back(curve(a));
  }
  return out;
}

}  // namespace mixpois
