#pragma once

// End-to-end study: fix a portfolio per case, re-simulate paths per
// replication, fit the five models, price the disability product and
// score the premiums against those under the true effects.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mixpois/fit_json.hpp"
#include "mixpois/gamma_mixing.hpp"
#include "mixpois/glm.hpp"
#include "mixpois/hierarchical.hpp"
#include "mixpois/numeric.hpp"
#include "mixpois/panel_io.hpp"
#include "mixpois/phasetype_fit.hpp"
#include "mixpois/simulation.hpp"
#include "mixpois/thiele.hpp"

namespace mixpois {

inline const std::vector<std::string>& all_models() {
  static const std::vector<std::string> m{"standard", "fixed", "simple", "hierarchical", "phasetype"};
  return m;
}

enum class Aggregate { insured, group };

struct StudyConfig {
  std::uint64_t seed = 20240101;
  std::vector<CaseTag> cases{CaseTag::A, CaseTag::B, CaseTag::C};
  std::vector<std::string> models = all_models();
  int replications = 10;
  int n_groups = 100;
  std::int64_t total_insured = 5000;
  double scale = 1.0;  // multiplies total_insured
  std::map<std::string, int> phasetype_dims{{"A", 3}, {"B", 6}, {"C", 6}};
  PhPriorUpdate phasetype_update = PhPriorUpdate::grid;
  bool hierarchical_in_case_c = false;
  Aggregate aggregate = Aggregate::insured;
  CovariateAnchor anchor = CovariateAnchor::right_endpoint;

  std::int64_t scaled_total() const {
    return std::max<std::int64_t>(n_groups, static_cast<std::int64_t>(std::llround(static_cast<double>(total_insured) * scale)));
  }

  ScenarioConfig scenario(CaseTag c) const {
    auto s = ScenarioConfig::for_case(c, seed);
    s.n_groups = n_groups;
    s.total_insured = scaled_total();
    return s;
  }

  bool applies(const std::string& model, CaseTag c) const {
    return !(model == "hierarchical" && c == CaseTag::C && !hierarchical_in_case_c);
  }

  int phasetype_dim(CaseTag c) const {
    const auto it = phasetype_dims.find(case_name(c));
    return it == phasetype_dims.end() ? 3 : it->second;
  }

  void validate() const {
    if (cases.empty()) throw ConfigError("no cases selected");
    if (models.empty()) throw ConfigError("no models selected");
    for (const auto& m : models)
      if (std::find(all_models().begin(), all_models().end(), m) == all_models().end())
        throw ConfigError("unknown model '" + m + "'");
    if (replications < 1) throw ConfigError("replications must be at least 1");
    if (!(scale > 0.0)) throw ConfigError("scale must be positive");
    for (const auto& [c, p] : phasetype_dims)
      if (p < 1) throw ConfigError("phase-type dimension for case " + c + " must be positive");
    for (auto c : cases) scenario(c).validate();
  }
};

inline std::string aggregate_name(Aggregate a) { return a == Aggregate::insured ? "insured" : "group"; }

inline Aggregate parse_aggregate(const std::string& s) {
  if (s == "insured") return Aggregate::insured;
  if (s == "group") return Aggregate::group;
  throw ConfigError("unknown aggregate '" + s + "' (expected insured or group)");
}

inline Json config_to_json(const StudyConfig& c) {
  Json cases = Json::array();
  for (auto k : c.cases) cases.push_back(case_name(k));
  return {{"seed", c.seed},
          {"cases", cases},
          {"models", c.models},
          {"replications", c.replications},
          {"n_groups", c.n_groups},
          {"total_insured", c.total_insured},
          {"scale", c.scale},
          {"effective_total_insured", c.scaled_total()},
          {"phasetype_dims", c.phasetype_dims},
          {"phasetype_update", c.phasetype_update == PhPriorUpdate::exact ? "exact" : "grid"},
          {"hierarchical_in_case_c", c.hierarchical_in_case_c},
          {"aggregate", aggregate_name(c.aggregate)},
          {"covariate_anchor", c.anchor == CovariateAnchor::right_endpoint ? "right_endpoint" : "midpoint"}};
}

/// Reads a study configuration; absent keys keep their defaults and
/// unknown keys are rejected.
inline StudyConfig config_from_json(const Json& j) {
  static const std::vector<std::string> known{"seed",          "cases",           "models",
                                              "replications",  "n_groups",        "total_insured",
                                              "scale",         "phasetype_dims",  "phasetype_update",
                                              "hierarchical_in_case_c", "aggregate", "covariate_anchor",
                                              "effective_total_insured"};
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  StudyConfig c;
  try {
    for (const auto& [key, value] : j.items())
      if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown configuration key '" + key + "'");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("cases")) {
      c.cases.clear();
      for (const auto& s : j.at("cases")) c.cases.push_back(parse_case(s.get<std::string>()));
    }
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("replications")) c.replications = j.at("replications").get<int>();
    if (j.contains("n_groups")) c.n_groups = j.at("n_groups").get<int>();
    if (j.contains("total_insured")) c.total_insured = j.at("total_insured").get<std::int64_t>();
    if (j.contains("scale")) c.scale = j.at("scale").get<double>();
    if (j.contains("phasetype_dims")) c.phasetype_dims = j.at("phasetype_dims").get<std::map<std::string, int>>();
    if (j.contains("phasetype_update")) {
      const auto u = j.at("phasetype_update").get<std::string>();
      if (u != "exact" && u != "grid") throw ConfigError("phasetype_update must be exact or grid");
      c.phasetype_update = u == "exact" ? PhPriorUpdate::exact : PhPriorUpdate::grid;
    }
    if (j.contains("hierarchical_in_case_c")) c.hierarchical_in_case_c = j.at("hierarchical_in_case_c").get<bool>();
    if (j.contains("aggregate")) c.aggregate = parse_aggregate(j.at("aggregate").get<std::string>());
    if (j.contains("covariate_anchor")) {
      const auto a = j.at("covariate_anchor").get<std::string>();
      if (a != "right_endpoint" && a != "midpoint") throw ConfigError("covariate_anchor must be right_endpoint or midpoint");
      c.anchor = a == "right_endpoint" ? CovariateAnchor::right_endpoint : CovariateAnchor::midpoint;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid configuration value: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Fitting

inline MixedPoissonFit fit_model(const std::string& model, const PortfolioDataset& data, const StudyConfig& cfg,
                                 CaseTag c) {
  if (model == "standard") return fit_standard_model(data);
  if (model == "fixed") return fit_fixed_effects_model(data);
  if (model == "simple") return em_fit_independent_gamma(data);
  if (model == "hierarchical") return ecm_fit_hier(data);
  if (model == "phasetype") {
    PhEmOptions opts;
    opts.p1 = opts.p2 = cfg.phasetype_dim(c);
    opts.seed = cfg.seed;
    opts.update = cfg.phasetype_update;
    return em_fit_bivph_mixed_poisson(data, opts);
  }
  throw ConfigError("unknown model '" + model + "'");
}

// ---------------------------------------------------------------------------
// Scoring

/// theta_hat * sum_k E_k mu(t_k; beta_hat) / sum_k E_k mu(t_k; beta_true),
/// which puts estimated effects on the scale of the true baseline. Empty
/// when the group has no exposure for the characteristic.
inline std::optional<double> scaled_group_effect(double theta_hat, const Betas& beta_hat, const Betas& beta_true,
                                                 const GroupObservations& g, Characteristic c) {
  const auto j = index(c);
  double num = 0.0, den = 0.0;
  for (const auto& cell : g.of(c)) {
    num += cell.exposure * std::exp(linear_predictor(cell, beta_hat[j]));
    den += cell.exposure * std::exp(linear_predictor(cell, beta_true[j]));
  }
  if (!(den > 0.0)) return std::nullopt;
  return theta_hat * num / den;
}

struct PremiumMetrics {
  double rmse = 0.0;
  double mae = 0.0;
};

/// RMSE and MAE in hundredths of a monetary unit.
inline PremiumMetrics compute_metrics(const std::vector<double>& model, const std::vector<double>& truth) {
  if (model.empty()) throw DataError("compute_metrics: empty premium table");
  if (model.size() != truth.size()) throw DataError("compute_metrics: unpaired premiums");
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const double d = model[i] - truth[i];
    sq += d * d;
    ab += std::abs(d);
  }
  const double n = static_cast<double>(model.size());
  return {100.0 * std::sqrt(sq / n), 100.0 * ab / n};
}

/// Per-group effects of a fit in portfolio order (matched by group id).
inline std::vector<std::array<double, 2>> effects_of(const MixedPoissonFit& fit, const std::vector<std::string>& ids) {
  std::map<std::string, std::array<double, 2>> by_id;
  for (const auto& g : fit.group_posteriors) by_id[g.group_id] = g.theta;
  std::vector<std::array<double, 2>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("fit has no effect for group " + id);
    out.push_back(it->second);
  }
  return out;
}

/// Paired premium vectors flattened over insured, or summed per group.
inline PremiumMetrics score_premiums(const std::vector<std::vector<double>>& model,
                                     const std::vector<std::vector<double>>& truth, Aggregate agg) {
  std::vector<double> m, t;
  for (std::size_t g = 0; g < model.size(); ++g) {
    if (agg == Aggregate::insured) {
      m.insert(m.end(), model[g].begin(), model[g].end());
      t.insert(t.end(), truth[g].begin(), truth[g].end());
    } else {
      m.push_back(std::accumulate(model[g].begin(), model[g].end(), 0.0));
      t.push_back(std::accumulate(truth[g].begin(), truth[g].end(), 0.0));
    }
  }
  return compute_metrics(m, t);
}

// ---------------------------------------------------------------------------
// Per-insured premium tables

struct PremiumRow {
  std::string group_id;
  std::size_t insured_id = 0;
  double entry_age = 0.0;
  double premium_true = 0.0;
  double premium_model = 0.0;
  std::string model_tag;
};

inline constexpr const char* kPremiumHeader = "group_id,insured_id,entry_age,premium_true,premium_model,model_tag";

inline std::vector<PremiumRow> premium_table(const Portfolio& portfolio, const MixedPoissonFit& fit) {
  const auto truth = portfolio_premiums(portfolio.entry_ages, portfolio.effects, true_betas());
  const auto model = portfolio_premiums(portfolio.entry_ages, effects_of(fit, portfolio.group_ids), fit.betas);
  std::vector<PremiumRow> rows;
  for (std::size_t g = 0; g < truth.size(); ++g)
    for (std::size_t i = 0; i < truth[g].size(); ++i)
      rows.push_back({portfolio.group_ids[g], i + 1, portfolio.entry_ages[g][i], truth[g][i], model[g][i], fit.model});
  return rows;
}

inline std::string format_premium_csv(const std::vector<PremiumRow>& rows) {
  std::string out = std::string(kPremiumHeader) + "\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{}\n", r.group_id, r.insured_id, r.entry_age, r.premium_true,
                       r.premium_model, r.model_tag);
  return out;
}

inline std::vector<PremiumRow> parse_premium_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kPremiumHeader)
    throw DataError(std::string("premium CSV must start with header '") + kPremiumHeader + "'");
  std::vector<PremiumRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw DataError(fmt::format("premium CSV line {}: expected 6 fields", lineno));
    try {
      std::size_t pos = 0;
      PremiumRow r;
      r.group_id = f[0];
      r.insured_id = std::stoul(f[1], &pos);
      r.entry_age = std::stod(f[2]);
      r.premium_true = std::stod(f[3]);
      r.premium_model = std::stod(f[4]);
      r.model_tag = f[5];
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("premium CSV line {}: malformed number", lineno));
    }
  }
  return rows;
}

/// Metrics per model tag, over insured or over per-group premium totals.
inline std::map<std::string, PremiumMetrics> evaluate_premiums(const std::vector<PremiumRow>& rows, Aggregate agg) {
  std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>> by_tag;
  for (const auto& r : rows) {
    auto& [m, t] = by_tag[r.model_tag][r.group_id];
    m.push_back(r.premium_model);
    t.push_back(r.premium_true);
  }
  std::map<std::string, PremiumMetrics> out;
  for (const auto& [tag, groups] : by_tag) {
    std::vector<std::vector<double>> m, t;
    for (const auto& [id, mt] : groups) {
      m.push_back(mt.first);
      t.push_back(mt.second);
    }
    out[tag] = score_premiums(m, t, agg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct FitRecord {
  CaseTag case_tag = CaseTag::A;
  std::string model;
  int replication = 0;
  std::string status = "ok";
  double loglik = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double mae = std::numeric_limits<double>::quiet_NaN();
  double posterior_tau = std::numeric_limits<double>::quiet_NaN();  // Kendall tau of posterior means
  std::vector<double> loglik_trace;
};

struct ScatterRow {
  CaseTag case_tag = CaseTag::A;
  std::string model;
  std::string group_id;
  std::int64_t group_size = 0;
  std::string size_class;  // small / medium / large for the representative groups
  std::array<double, 2> theta_true{};
  std::array<std::optional<double>, 2> theta_scaled{};
};

struct StudyReport {
  StudyConfig config;
  std::vector<FitRecord> records;
  std::vector<ScatterRow> scatter;                   // first replication
  std::map<std::string, MixedPoissonFit> fits;       // key "<model>_<case>", first replication

  const FitRecord* find(CaseTag c, const std::string& model, int replication) const {
    for (const auto& r : records)
      if (r.case_tag == c && r.model == model && r.replication == replication) return &r;
    return nullptr;
  }
};

/// Groups at the 10%, 50% and 90% size quantiles, labelled small, medium
/// and large.
inline std::map<std::size_t, std::string> representative_groups(const std::vector<std::int64_t>& sizes) {
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sizes[a] < sizes[b]; });
  std::map<std::size_t, std::string> out;
  const std::array<std::pair<double, const char*>, 3> q{{{0.1, "small"}, {0.5, "medium"}, {0.9, "large"}}};
  for (const auto& [p, label] : q) {
    const auto k = static_cast<std::size_t>(std::floor(p * static_cast<double>(order.size() - 1)));
    out.emplace(order[k], label);
  }
  return out;
}

/// Runs every configured case, replication and model. Failures are
/// recorded per (case, model, replication) and the study continues.
inline StudyReport run_scenario(const StudyConfig& cfg) {
  cfg.validate();
  StudyReport report;
  report.config = cfg;
  const Betas beta_true = true_betas();
  for (auto c : cfg.cases) {
    const auto scenario = cfg.scenario(c);
    const Portfolio portfolio = make_portfolio(scenario);
    const auto truth = portfolio_premiums(portfolio.entry_ages, portfolio.effects, beta_true);
    const auto representative = representative_groups(portfolio.sizes);
    for (int rep = 0; rep < cfg.replications; ++rep) {
      std::optional<PortfolioDataset> data;
      std::string sim_error;
      try {
        data = simulate_panel(portfolio, static_cast<std::uint64_t>(rep), cfg.anchor);
      } catch (const std::exception& e) {
        sim_error = std::string("simulation failed: ") + e.what();
      }
      for (const auto& model : cfg.models) {
        if (!cfg.applies(model, c)) continue;
        FitRecord rec;
        rec.case_tag = c;
        rec.model = model;
        rec.replication = rep;
        if (!data) {
          rec.status = sim_error;
          report.records.push_back(std::move(rec));
          continue;
        }
        std::optional<MixedPoissonFit> fit;
        try {
          fit = fit_model(model, *data, cfg, c);
          rec.loglik = fit->loglik;
          rec.iterations = fit->iterations;
          rec.converged = fit->converged;
          rec.loglik_trace = fit->loglik_trace;
          std::vector<double> t1, t2;
          for (const auto& g : fit->group_posteriors) {
            t1.push_back(g.theta[0]);
            t2.push_back(g.theta[1]);
          }
          rec.posterior_tau = kendall_tau(t1, t2);
        } catch (const std::exception& e) {
          rec.status = std::string("fit failed: ") + e.what();
        }
        if (fit) {
          try {
            const auto effects = effects_of(*fit, portfolio.group_ids);
            const auto premiums = portfolio_premiums(portfolio.entry_ages, effects, fit->betas);
            const auto m = score_premiums(premiums, truth, cfg.aggregate);
            rec.rmse = m.rmse;
            rec.mae = m.mae;
          } catch (const std::exception& e) {
            rec.status = std::string("pricing failed: ") + e.what();
          }
          if (rep == 0) {
            std::map<std::string, const GroupPosterior*> by_id;
            for (const auto& g : fit->group_posteriors) by_id[g.group_id] = &g;
            for (std::size_t g = 0; g < portfolio.group_ids.size(); ++g) {
              ScatterRow row;
              row.case_tag = c;
              row.model = model;
              row.group_id = portfolio.group_ids[g];
              row.group_size = portfolio.sizes[g];
              if (const auto it = representative.find(g); it != representative.end()) row.size_class = it->second;
              row.theta_true = portfolio.effects[g];
              const auto post = by_id.find(row.group_id);
              if (post != by_id.end() && g < data->groups.size())
                for (auto ch : kCharacteristics)
                  row.theta_scaled[index(ch)] =
                      scaled_group_effect(post->second->theta[index(ch)], fit->betas, beta_true, data->groups[g], ch);
              report.scatter.push_back(std::move(row));
            }
            report.fits.emplace(model + "_" + case_name(c), *fit);
          }
        }
        report.records.push_back(std::move(rec));
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string num(double x) { return std::isfinite(x) ? fmt::format("{:.17g}", x) : "NA"; }

inline std::string num(const std::optional<double>& x) { return x ? num(*x) : "NA"; }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

inline std::string format_loglik_csv(const StudyReport& r) {
  std::string out = "case,model,replication,loglik,iterations,converged,posterior_kendall_tau,status\n";
  for (const auto& x : r.records)
    out += fmt::format("{},{},{},{},{},{},{},{}\n", case_name(x.case_tag), x.model, x.replication, detail::num(x.loglik),
                       x.iterations, x.converged ? "true" : "false", detail::num(x.posterior_tau),
                       detail::csv_field(x.status));
  return out;
}

inline std::string format_premium_errors_csv(const StudyReport& r) {
  std::string out = "case,model,replication,aggregate,rmse,mae,status\n";
  for (const auto& x : r.records)
    out += fmt::format("{},{},{},{},{},{},{}\n", case_name(x.case_tag), x.model, x.replication,
                       aggregate_name(r.config.aggregate), detail::num(x.rmse), detail::num(x.mae),
                       detail::csv_field(x.status));
  return out;
}

inline std::string format_effects_scatter_csv(const StudyReport& r) {
  std::string out =
      "case,model,group_id,group_size,size_class,theta_true_ai,theta_true_ia,theta_scaled_ai,theta_scaled_ia\n";
  for (const auto& x : r.scatter)
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", case_name(x.case_tag), x.model, x.group_id, x.group_size,
                       x.size_class, detail::num(x.theta_true[0]), detail::num(x.theta_true[1]),
                       detail::num(x.theta_scaled[0]), detail::num(x.theta_scaled[1]));
  return out;
}

/// Writes loglik.csv, premium_errors.csv, effects_scatter.csv,
/// fit_<model>_<case>.json and config_resolved.json into `outdir`.
inline void emit_outputs(const StudyReport& r, const std::string& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create output directory '" + outdir + "': " + ec.message());
  const std::filesystem::path dir(outdir);
  write_text_file((dir / "loglik.csv").string(), format_loglik_csv(r));
  write_text_file((dir / "premium_errors.csv").string(), format_premium_errors_csv(r));
  write_text_file((dir / "effects_scatter.csv").string(), format_effects_scatter_csv(r));
  for (const auto& [key, fit] : r.fits)
    write_text_file((dir / ("fit_" + key + ".json")).string(), fit_to_json(fit).dump(2) + "\n");
  write_text_file((dir / "config_resolved.json").string(), config_to_json(r.config).dump(2) + "\n");
}

}  // namespace mixpois
