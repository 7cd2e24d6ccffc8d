#pragma once

// Univariate and feed-forward bivariate phase-type laws, and the
// mixed-Poisson quantities they induce: joint count densities, posterior
// cross-moments and posterior densities, all assembled in log space.
//
// Inverse powers (I - T/e)^{-n} are applied by repeated solves with one LU
// factorization. For a sub-intensity T and e > 0 the matrix I - T/e is an
// M-matrix with row sums >= 1, so its inverse is nonnegative with row sums
// <= 1 and the iterates never expand in the sup-norm. Iterates are
// renormalized as they go and the scale is tracked separately.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixpois/errors.hpp"
#include "mixpois/model.hpp"
#include "mixpois/numeric.hpp"

namespace mixpois {

/// exp(M) by scaling and squaring with a [6/6] Pade approximant; the matrix
/// is scaled until its 1-norm is at most 1/2.
inline Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& M) {
  const Eigen::Index n = M.rows();
  if (M.cols() != n) throw ParameterError("matrix_exponential: matrix must be square");
  if (!M.allFinite()) throw ParameterError("matrix_exponential: non-finite entries");
  if (n == 0) return M;
  const double norm = M.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / 0.5))));
  const Eigen::MatrixXd A = M / std::ldexp(1.0, squarings);

  // Pade [6/6] coefficients c_k = (12-k)! 6! / (12! k! (6-k)!).
  constexpr double c[7] = {1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0};
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd A2 = A * A;
  const Eigen::MatrixXd A4 = A2 * A2;
  const Eigen::MatrixXd A6 = A4 * A2;
  const Eigen::MatrixXd U = A * (c[1] * I + c[3] * A2 + c[5] * A4);
  const Eigen::MatrixXd V = c[0] * I + c[2] * A2 + c[4] * A4 + c[6] * A6;
  Eigen::MatrixXd R = (V - U).partialPivLu().solve(V + U);
  for (int s = 0; s < squarings; ++s) R = R * R;
  return R;
}

// ---------------------------------------------------------------------------
// Univariate PH

struct UnivariatePH {
  Eigen::RowVectorXd pi;
  Eigen::MatrixXd T;

  Eigen::VectorXd exit() const { return -(T.rowwise().sum()); }
};

inline void validate_subintensity(const Eigen::MatrixXd& T, const std::string& what, double tol = 1e-10) {
  if (T.rows() != T.cols()) throw ParameterError(what + ": not square");
  for (Eigen::Index i = 0; i < T.rows(); ++i) {
    if (!(T(i, i) < 0.0)) throw ParameterError(what + ": diagonal must be negative");
    for (Eigen::Index j = 0; j < T.cols(); ++j)
      if (i != j && T(i, j) < -tol) throw ParameterError(what + ": negative off-diagonal");
  }
}

inline void validate(const UnivariatePH& ph, double tol = 1e-10) {
  if (ph.pi.size() != ph.T.rows()) throw ParameterError("phase-type: dimension mismatch");
  if ((ph.pi.array() < -tol).any() || std::abs(ph.pi.sum() - 1.0) > 1e-8)
    throw ParameterError("phase-type: initial vector is not a probability vector");
  validate_subintensity(ph.T, "phase-type T", tol);
  if ((ph.exit().array() < -tol * (1.0 + ph.T.cwiseAbs().maxCoeff())).any())
    throw ParameterError("phase-type: positive row sum");
}

inline double ph_density(const UnivariatePH& ph, double theta) {
  if (!(theta > 0.0)) throw ParameterError("ph_density: theta must be positive");
  return ph.pi * matrix_exponential(ph.T * theta) * ph.exit();
}

inline double ph_cdf(const UnivariatePH& ph, double theta) {
  if (theta <= 0.0) return 0.0;
  return 1.0 - (ph.pi * matrix_exponential(ph.T * theta)).sum();
}

inline double ph_mean(const UnivariatePH& ph) {
  return ph.pi * (-ph.T).partialPivLu().solve(Eigen::VectorXd::Ones(ph.T.rows()));
}

/// pi (uI - T)^{-1} t by a linear solve.
inline double ph_laplace(const UnivariatePH& ph, double u) {
  if (u < 0.0) throw ParameterError("ph_laplace: u must be nonnegative");
  const Eigen::Index p = ph.T.rows();
  const Eigen::MatrixXd A = u * Eigen::MatrixXd::Identity(p, p) - ph.T;
  return ph.pi * A.partialPivLu().solve(ph.exit());
}

// ---------------------------------------------------------------------------
// Bivariate feed-forward PH

inline void validate(const BivariatePH& b, double tol = 1e-10) {
  const auto p1 = b.p1(), p2 = b.p2();
  if (b.eta.size() != p1 || b.T12.rows() != p1 || b.T12.cols() != p2)
    throw ParameterError("bivariate phase-type: dimension mismatch");
  if ((b.eta.array() < -tol).any() || std::abs(b.eta.sum() - 1.0) > 1e-8)
    throw ParameterError("bivariate phase-type: eta is not a probability vector");
  validate_subintensity(b.T11, "T11", tol);
  validate_subintensity(b.T22, "T22", tol);
  if ((b.T12.array() < -tol).any()) throw ParameterError("bivariate phase-type: T12 must be nonnegative");
  const double scale = 1.0 + b.T11.cwiseAbs().maxCoeff();
  if (((b.T11.rowwise().sum() + b.T12.rowwise().sum()).array().abs() > tol * scale).any())
    throw ParameterError("bivariate phase-type: T11 1 != -T12 1");
  if ((b.exit2().array() < -tol * (1.0 + b.T22.cwiseAbs().maxCoeff())).any())
    throw ParameterError("bivariate phase-type: T22 has a positive row sum");
}

inline UnivariatePH first_marginal(const BivariatePH& b) { return {b.eta, b.T11}; }

inline UnivariatePH second_marginal(const BivariatePH& b) {
  const Eigen::RowVectorXd alpha = (-b.T11).transpose().partialPivLu().solve(b.eta.transpose()).transpose() * b.T12;
  return {alpha, b.T22};
}

inline double bivph_density(const BivariatePH& b, double theta1, double theta2) {
  if (!(theta1 > 0.0) || !(theta2 > 0.0)) throw ParameterError("bivph_density: arguments must be positive");
  return b.eta * matrix_exponential(b.T11 * theta1) * b.T12 * matrix_exponential(b.T22 * theta2) * b.exit2();
}

inline double bivph_joint_laplace(const BivariatePH& b, double u1, double u2) {
  if (u1 < 0.0 || u2 < 0.0) throw ParameterError("bivph_joint_laplace: arguments must be nonnegative");
  const Eigen::MatrixXd A1 = u1 * Eigen::MatrixXd::Identity(b.p1(), b.p1()) - b.T11;
  const Eigen::MatrixXd A2 = u2 * Eigen::MatrixXd::Identity(b.p2(), b.p2()) - b.T22;
  const Eigen::VectorXd right = A2.partialPivLu().solve(b.exit2());
  return b.eta * A1.partialPivLu().solve(b.T12 * right);
}

/// Bivariate moment E(Theta1^k Theta2^s) of the prior.
inline double bivph_moment(const BivariatePH& b, int k, int s) {
  const auto lu1 = (-b.T11).partialPivLu();
  const auto lu2 = (-b.T22).partialPivLu();
  Eigen::VectorXd v = b.exit2();
  for (int i = 0; i < s + 1; ++i) v = lu2.solve(v);
  v = b.T12 * v;
  for (int i = 0; i < k + 1; ++i) v = lu1.solve(v);
  return std::exp(std::lgamma(k + 1.0) + std::lgamma(s + 1.0)) * b.eta.dot(v);
}

// ---------------------------------------------------------------------------
// Scaled resolvent powers

/// A vector stored as v * exp(log_scale) with max|v| = 1 (or v = 0).
struct ScaledVector {
  Eigen::VectorXd v;
  double log_scale = 0.0;

  static ScaledVector from(Eigen::VectorXd x, double log_scale = 0.0) {
    ScaledVector s{std::move(x), log_scale};
    s.normalize();
    return s;
  }
  void normalize() {
    const double m = v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
    if (m > 0.0 && std::isfinite(m)) {
      v /= m;
      log_scale += std::log(m);
    } else if (m == 0.0) {
      log_scale = kNegInf;
    }
  }
};

/// Applies R = M^{-1} where M = I - T/e for e > 0 and M = -T for e = 0, so
/// that (eI - T)^{-1} = sigma R with log sigma = -log e (or 0).
class Resolvent {
 public:
  Resolvent(const Eigen::MatrixXd& T, double e) {
    if (e < 0.0 || !std::isfinite(e)) throw ParameterError("Resolvent: exposure must be finite and nonnegative");
    const Eigen::Index p = T.rows();
    Eigen::MatrixXd M = e > 0.0 ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(p, p) - T / e) : Eigen::MatrixXd(-T);
    lu_.compute(M);
    lu_t_.compute(M.transpose());
    log_sigma_ = e > 0.0 ? -std::log(e) : 0.0;
  }
  double log_sigma() const { return log_sigma_; }
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return lu_.solve(v); }
  Eigen::RowVectorXd apply_left(const Eigen::RowVectorXd& v) const {
    return lu_t_.solve(v.transpose()).transpose();
  }
  /// R^{1..n} applied to v (entry i holds R^{i+1} v).
  std::vector<ScaledVector> right_powers(const ScaledVector& v, std::int64_t n) const {
    std::vector<ScaledVector> out;
    out.reserve(static_cast<std::size_t>(n));
    ScaledVector cur = v;
    for (std::int64_t i = 0; i < n; ++i) {
      cur.v = apply(cur.v);
      cur.normalize();
      out.push_back(cur);
    }
    return out;
  }
  std::vector<ScaledVector> left_powers(const ScaledVector& v, std::int64_t n) const {
    std::vector<ScaledVector> out;
    out.reserve(static_cast<std::size_t>(n));
    ScaledVector cur = v;
    for (std::int64_t i = 0; i < n; ++i) {
      cur.v = apply_left(cur.v.transpose()).transpose();
      cur.normalize();
      out.push_back(cur);
    }
    return out;
  }

 private:
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_, lu_t_;
  double log_sigma_ = 0.0;
};

namespace detail {

inline void check_counts(const std::array<std::int64_t, 2>& y, const std::array<double, 2>& e) {
  for (std::size_t j = 0; j < 2; ++j) {
    if (y[j] < 0) throw ParameterError("negative count");
    if (!(e[j] >= 0.0)) throw ParameterError("negative exposure");
    if (e[j] == 0.0 && y[j] > 0) throw ParameterError("occurrences without exposure");
  }
}

/// log of eta R1^{n1} T12 R2^{n2} t2 with n_j >= 1.
inline double log_matrix_expression(const BivariatePH& b, const Resolvent& r1, const Resolvent& r2, std::int64_t n1,
                                    std::int64_t n2) {
  ScaledVector v = ScaledVector::from(b.exit2());
  for (std::int64_t i = 0; i < n2; ++i) {
    v.v = r2.apply(v.v);
    v.normalize();
  }
  v.v = b.T12 * v.v;
  v.normalize();
  for (std::int64_t i = 0; i < n1; ++i) {
    v.v = r1.apply(v.v);
    v.normalize();
  }
  const double dot = b.eta.dot(v.v);
  if (!(dot > 0.0) || !std::isfinite(dot) || !std::isfinite(v.log_scale))
    throw NumericalBreakdown("phase-type matrix expression is not positive");
  return std::log(dot) + v.log_scale;
}

}  // namespace detail

/// log f_Y(y) for one group: log_prefactor + sum_j [log y_j! + (y_j+1) log sigma_j]
/// + log eta (I - T11/e1)^{-y1-1} T12 (I - T22/e2)^{-y2-1} (-T22) 1.
inline double log_joint_count_density(const BivariatePH& b, const std::array<std::int64_t, 2>& y,
                                      const std::array<double, 2>& e, double log_prefactor) {
  detail::check_counts(y, e);
  const Resolvent r1(b.T11, e[0]), r2(b.T22, e[1]);
  double acc = log_prefactor + detail::log_matrix_expression(b, r1, r2, y[0] + 1, y[1] + 1);
  acc += log_factorial(y[0]) + static_cast<double>(y[0] + 1) * r1.log_sigma();
  acc += log_factorial(y[1]) + static_cast<double>(y[1] + 1) * r2.log_sigma();
  return acc;
}

/// E(Theta1^k Theta2^s | Y = y) as a ratio of scaled matrix expressions.
inline double posterior_cross_moment(const BivariatePH& b, const std::array<std::int64_t, 2>& y,
                                     const std::array<double, 2>& e, int k, int s) {
  detail::check_counts(y, e);
  if (k < 0 || s < 0) throw ParameterError("posterior_cross_moment: negative order");
  const Resolvent r1(b.T11, e[0]), r2(b.T22, e[1]);
  const double den = detail::log_matrix_expression(b, r1, r2, y[0] + 1, y[1] + 1);
  const double num = detail::log_matrix_expression(b, r1, r2, y[0] + 1 + k, y[1] + 1 + s);
  const double y1 = static_cast<double>(y[0]), y2 = static_cast<double>(y[1]);
  const double log_ratio = std::lgamma(y1 + k + 1.0) - std::lgamma(y1 + 1.0) + std::lgamma(y2 + s + 1.0) -
                           std::lgamma(y2 + 1.0) + k * r1.log_sigma() + s * r2.log_sigma();
  return std::exp(log_ratio + num - den);
}

/// log f_{Theta|Y}(theta | y).
inline double posterior_log_density(const BivariatePH& b, const std::array<std::int64_t, 2>& y,
                                    const std::array<double, 2>& e, double theta1, double theta2) {
  detail::check_counts(y, e);
  if (!(theta1 > 0.0) || !(theta2 > 0.0)) throw ParameterError("posterior_log_density: theta must be positive");
  const Resolvent r1(b.T11, e[0]), r2(b.T22, e[1]);
  const double den = detail::log_matrix_expression(b, r1, r2, y[0] + 1, y[1] + 1);
  const std::array<double, 2> theta{theta1, theta2};
  const std::array<double, 2> log_sigma{r1.log_sigma(), r2.log_sigma()};
  double acc = std::log(bivph_density(b, theta1, theta2)) - den;
  for (std::size_t j = 0; j < 2; ++j)
    acc += xlogy(static_cast<double>(y[j]), theta[j]) - theta[j] * e[j] - log_factorial(y[j]) -
           static_cast<double>(y[j] + 1) * log_sigma[j];
  return acc;
}

// ---------------------------------------------------------------------------
// Complete-data sufficient statistics of the underlying Markov jump process
// (start states, occupation times, jumps), used by the PH M-step.

struct PhStatistics {
  Eigen::VectorXd starts;     // p1
  Eigen::VectorXd occupancy1; // p1
  Eigen::VectorXd occupancy2; // p2
  Eigen::MatrixXd jumps11;    // p1 x p1, diagonal unused
  Eigen::MatrixXd jumps12;    // p1 x p2
  Eigen::MatrixXd jumps22;    // p2 x p2, diagonal unused
  Eigen::VectorXd exits2;     // p2
  double weight = 0.0;

  static PhStatistics zeros(Eigen::Index p1, Eigen::Index p2) {
    PhStatistics s;
    s.starts = Eigen::VectorXd::Zero(p1);
    s.occupancy1 = Eigen::VectorXd::Zero(p1);
    s.occupancy2 = Eigen::VectorXd::Zero(p2);
    s.jumps11 = Eigen::MatrixXd::Zero(p1, p1);
    s.jumps12 = Eigen::MatrixXd::Zero(p1, p2);
    s.jumps22 = Eigen::MatrixXd::Zero(p2, p2);
    s.exits2 = Eigen::VectorXd::Zero(p2);
    return s;
  }
  PhStatistics& operator+=(const PhStatistics& o) {
    starts += o.starts;
    occupancy1 += o.occupancy1;
    occupancy2 += o.occupancy2;
    jumps11 += o.jumps11;
    jumps12 += o.jumps12;
    jumps22 += o.jumps22;
    exits2 += o.exits2;
    weight += o.weight;
    return *this;
  }
};

/// Posterior summaries of one group under the current PH prior: the two
/// posterior means and the exact expected complete-data statistics
/// E[stats | Y = y], integrated in closed form against the posterior of
/// Theta. Occupation integrals of theta^n e^{-e theta} against
/// convolutions of matrix exponentials reduce to sums of products of
/// resolvent powers.
struct PhGroupPosterior {
  double log_expression = 0.0;  // log eta R1^{y1+1} T12 R2^{y2+1} t2
  std::array<double, 2> mean{1.0, 1.0};
  PhStatistics stats;
};

inline PhGroupPosterior ph_group_posterior(const BivariatePH& b, const std::array<std::int64_t, 2>& y,
                                           const std::array<double, 2>& e, bool with_statistics = true) {
  detail::check_counts(y, e);
  const Eigen::Index p1 = b.p1(), p2 = b.p2();
  const Resolvent r1(b.T11, e[0]), r2(b.T22, e[1]);
  const std::int64_t y1 = y[0], y2 = y[1];
  const Eigen::VectorXd t2 = b.exit2();

  // rt[i] = R2^{i+1} t2, i = 0..y2+1 (one extra power for the mean).
  const auto rt = r2.right_powers(ScaledVector::from(t2), y2 + 2);
  const ScaledVector w = ScaledVector::from(b.T12 * rt[static_cast<std::size_t>(y2)].v,
                                            rt[static_cast<std::size_t>(y2)].log_scale);
  // rw[i] = R1^{i+1} w, i = 0..y1+1.
  const auto rw = r1.right_powers(w, y1 + 2);

  PhGroupPosterior out;
  const auto& top = rw[static_cast<std::size_t>(y1)];
  const double den_dot = b.eta.dot(top.v);
  if (!(den_dot > 0.0) || !std::isfinite(den_dot)) throw NumericalBreakdown("posterior normalizer is not positive");
  const double log_den = std::log(den_dot) + top.log_scale;
  out.log_expression = log_den;

  {
    const auto& up = rw[static_cast<std::size_t>(y1 + 1)];
    out.mean[0] = static_cast<double>(y1 + 1) *
                  std::exp(r1.log_sigma() + std::log(b.eta.dot(up.v)) + up.log_scale - log_den);
    const auto& rt_up = rt[static_cast<std::size_t>(y2 + 1)];
    Eigen::VectorXd v = b.T12 * rt_up.v;
    ScaledVector sv = ScaledVector::from(v, rt_up.log_scale);
    for (std::int64_t i = 0; i <= y1; ++i) {
      sv.v = r1.apply(sv.v);
      sv.normalize();
    }
    out.mean[1] = static_cast<double>(y2 + 1) *
                  std::exp(r2.log_sigma() + std::log(b.eta.dot(sv.v)) + sv.log_scale - log_den);
  }
  if (!with_statistics) return out;

  auto& st = out.stats;
  st = PhStatistics::zeros(p1, p2);
  st.weight = 1.0;

  // Left sequences: le[i] = eta R1^{i+1}, l2[i] = (eta R1^{y1+1} T12) R2^{i+1}.
  const auto le = r1.left_powers(ScaledVector::from(b.eta.transpose()), y1 + 1);
  const auto& le_top = le[static_cast<std::size_t>(y1)];
  const auto l2 = r2.left_powers(ScaledVector::from(b.T12.transpose() * le_top.v, le_top.log_scale), y2 + 1);

  st.starts = b.eta.transpose().cwiseProduct(top.v) * std::exp(top.log_scale - log_den);

  Eigen::MatrixXd G1 = Eigen::MatrixXd::Zero(p1, p1);
  for (std::int64_t a = 0; a <= y1; ++a) {
    const auto& l = le[static_cast<std::size_t>(a)];
    const auto& r = rw[static_cast<std::size_t>(y1 - a)];
    const double f = std::exp(l.log_scale + r.log_scale - log_den);
    if (f > 0.0) G1.noalias() += f * l.v * r.v.transpose();
  }
  G1 *= std::exp(r1.log_sigma());
  st.occupancy1 = G1.diagonal();
  st.jumps11 = b.T11.cwiseProduct(G1);
  st.jumps11.diagonal().setZero();

  const auto& rt_top = rt[static_cast<std::size_t>(y2)];
  st.jumps12 = b.T12.cwiseProduct(le_top.v * rt_top.v.transpose()) *
               std::exp(le_top.log_scale + rt_top.log_scale - log_den);

  Eigen::MatrixXd G2 = Eigen::MatrixXd::Zero(p2, p2);
  for (std::int64_t a = 0; a <= y2; ++a) {
    const auto& l = l2[static_cast<std::size_t>(a)];
    const auto& r = rt[static_cast<std::size_t>(y2 - a)];
    const double f = std::exp(l.log_scale + r.log_scale - log_den);
    if (f > 0.0) G2.noalias() += f * l.v * r.v.transpose();
  }
  G2 *= std::exp(r2.log_sigma());
  st.occupancy2 = G2.diagonal();
  st.jumps22 = b.T22.cwiseProduct(G2);
  st.jumps22.diagonal().setZero();

  const auto& l2_top = l2[static_cast<std::size_t>(y2)];
  st.exits2 = t2.cwiseProduct(l2_top.v) * std::exp(l2_top.log_scale - log_den);
  return out;
}

/// PH M-step from accumulated statistics. States with no occupation keep
/// their previous rates; their indices are reported through `held`.
inline BivariatePH ph_mstep(const PhStatistics& st, const BivariatePH& previous, std::vector<std::string>* held = nullptr) {
  const Eigen::Index p1 = previous.p1(), p2 = previous.p2();
  constexpr double kTiny = 1e-300;
  BivariatePH next = previous;
  next.eta = (st.starts / st.starts.sum()).transpose();
  for (Eigen::Index k = 0; k < p1; ++k) {
    if (!(st.occupancy1(k) > kTiny)) {
      if (held) held->push_back("block1 state " + std::to_string(k) + " has no occupation; rates held");
      continue;
    }
    double out = 0.0;
    for (Eigen::Index l = 0; l < p1; ++l) {
      if (l == k) continue;
      next.T11(k, l) = st.jumps11(k, l) / st.occupancy1(k);
      out += next.T11(k, l);
    }
    for (Eigen::Index l = 0; l < p2; ++l) {
      next.T12(k, l) = st.jumps12(k, l) / st.occupancy1(k);
      out += next.T12(k, l);
    }
    next.T11(k, k) = -out;
  }
  for (Eigen::Index k = 0; k < p2; ++k) {
    if (!(st.occupancy2(k) > kTiny)) {
      if (held) held->push_back("block2 state " + std::to_string(k) + " has no occupation; rates held");
      continue;
    }
    double out = st.exits2(k) / st.occupancy2(k);
    for (Eigen::Index l = 0; l < p2; ++l) {
      if (l == k) continue;
      next.T22(k, l) = st.jumps22(k, l) / st.occupancy2(k);
      out += next.T22(k, l);
    }
    next.T22(k, k) = -out;
  }
  return next;
}

}  // namespace mixpois
