#pragma once

// JSON form of fitted models. Doubles are written with round-trip
// precision, so reading a file back restores the parameters exactly.

#include <fstream>
#include <string>

#include <json.hpp>

#include "mixpois/errors.hpp"
#include "mixpois/model.hpp"

namespace mixpois {

using Json = nlohmann::json;

namespace detail {

inline Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline Eigen::VectorXd json_vector(const Json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a.at(i).get<double>();
  return v;
}

inline Eigen::MatrixXd json_matrix(const Json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto m = n > 0 ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
  Eigen::MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(r.size()) != m) throw DataError("ragged matrix in fit JSON");
    for (Eigen::Index j = 0; j < m; ++j) out(i, j) = r.at(static_cast<std::size_t>(j)).get<double>();
  }
  return out;
}

}  // namespace detail

/// Writes the prior's fields into a flat fit record.
inline void prior_to_json(const PriorParams& prior, Json& out) {
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, GammaPrior>) {
          out["psi_ai"] = p.psi[0];
          out["psi_ia"] = p.psi[1];
        } else if constexpr (std::is_same_v<P, HierPrior>) {
          out["eta"] = p.eta;
          out["nu"] = p.nu;
        } else if constexpr (std::is_same_v<P, BivariatePH>) {
          out["p1"] = p.T11.rows();
          out["p2"] = p.T22.rows();
          out["eta"] = detail::vector_json(p.eta.transpose());
          out["T11"] = detail::matrix_json(p.T11);
          out["T12"] = detail::matrix_json(p.T12);
          out["T22"] = detail::matrix_json(p.T22);
        }
      },
      prior);
}

/// The prior type follows from the model tag.
inline PriorParams prior_from_json(const std::string& model, const Json& j) {
  if (model == "standard") return NoEffects{};
  if (model == "fixed") return FixedEffects{};
  if (model == "simple") return GammaPrior{{j.at("psi_ai").get<double>(), j.at("psi_ia").get<double>()}};
  if (model == "hierarchical") return HierPrior{j.at("eta").get<double>(), j.at("nu").get<double>()};
  if (model == "phasetype") {
    BivariatePH b;
    b.eta = detail::json_vector(j.at("eta")).transpose();
    b.T11 = detail::json_matrix(j.at("T11"));
    b.T12 = detail::json_matrix(j.at("T12"));
    b.T22 = detail::json_matrix(j.at("T22"));
    if (b.T11.rows() != j.at("p1").get<Eigen::Index>() || b.T22.rows() != j.at("p2").get<Eigen::Index>())
      throw DataError("phase-type dimensions disagree with p1/p2 in fit JSON");
    return b;
  }
  throw DataError("unknown model '" + model + "' in fit JSON");
}

inline Json fit_to_json(const MixedPoissonFit& fit) {
  Json groups = Json::array();
  for (const auto& g : fit.group_posteriors) groups.push_back({{"group_id", g.group_id}, {"theta", {g.theta[0], g.theta[1]}}});
  Json out{{"model", fit.model},
           {"beta_ai", detail::vector_json(fit.betas[0])},
           {"beta_ia", detail::vector_json(fit.betas[1])}};
  prior_to_json(fit.prior, out);
  out["loglik"] = fit.loglik;
  out["group_posteriors"] = groups;
  out["seed"] = fit.seed;
  out["iterations"] = fit.iterations;
  out["converged"] = fit.converged;
  out["loglik_trace"] = fit.loglik_trace;
  out["diagnostics"] = fit.diagnostics;
  return out;
}

inline MixedPoissonFit fit_from_json(const Json& j) {
  try {
    MixedPoissonFit fit;
    fit.model = j.at("model").get<std::string>();
    fit.betas[0] = detail::json_vector(j.at("beta_ai"));
    fit.betas[1] = detail::json_vector(j.at("beta_ia"));
    fit.prior = prior_from_json(fit.model, j);
    for (const auto& g : j.at("group_posteriors"))
      fit.group_posteriors.push_back(
          {g.at("group_id").get<std::string>(), {g.at("theta").at(0).get<double>(), g.at("theta").at(1).get<double>()}});
    fit.loglik = j.at("loglik").get<double>();
    fit.seed = j.value("seed", std::uint64_t{0});
    fit.iterations = j.value("iterations", 0);
    fit.converged = j.value("converged", false);
    fit.loglik_trace = j.value("loglik_trace", std::vector<double>{});
    fit.diagnostics = j.value("diagnostics", std::vector<std::string>{});
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed fit JSON: ") + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace mixpois
