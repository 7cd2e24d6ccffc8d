// Command-line driver: simulate, fit, price, evaluate, study.
//
// Errors are reported on stderr as one JSON object
//   {"error": {"kind": "...", "message": "..."}}
// with a nonzero exit status.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mixpois/fit_json.hpp"
#include "mixpois/panel_io.hpp"
#include "mixpois/simulation.hpp"
#include "mixpois/study.hpp"

using namespace mixpois;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> case_tag;
  std::string model = "all";
  std::optional<int> replications;
  std::string out = ".";
  std::optional<double> scale;
  std::optional<std::string> aggregate;
  std::string in;
};

StudyConfig resolve(const CommonFlags& f) {
  StudyConfig cfg = f.config.empty() ? StudyConfig{} : config_from_json(read_json_file(f.config));
  if (f.seed) cfg.seed = *f.seed;
  if (f.case_tag) cfg.cases = {parse_case(*f.case_tag)};
  if (f.model != "all") cfg.models = {f.model};
  if (f.replications) cfg.replications = *f.replications;
  if (f.scale) cfg.scale = *f.scale;
  if (f.aggregate) cfg.aggregate = parse_aggregate(*f.aggregate);
  cfg.validate();
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string out_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

std::string portfolio_csv(const Portfolio& p) {
  std::string out = "group_id,insured_id,entry_age\n";
  for (std::size_t g = 0; g < p.group_ids.size(); ++g)
    for (std::size_t i = 0; i < p.entry_ages[g].size(); ++i)
      out += fmt::format("{},{},{:.17g}\n", p.group_ids[g], i + 1, p.entry_ages[g][i]);
  return out;
}

void run_simulate(const CommonFlags& f) {
  const auto cfg = resolve(f);
  ensure_dir(f.out);
  for (auto c : cfg.cases) {
    const auto portfolio = make_portfolio(cfg.scenario(c));
    const auto tag = case_name(c);
    write_text_file(out_path(f.out, "effects_" + tag + ".csv"), format_effects_csv(portfolio.group_ids, portfolio.effects));
    write_text_file(out_path(f.out, "portfolio_" + tag + ".csv"), portfolio_csv(portfolio));
    for (int rep = 0; rep < cfg.replications; ++rep) {
      const auto data = simulate_panel(portfolio, static_cast<std::uint64_t>(rep), cfg.anchor);
      write_text_file(out_path(f.out, fmt::format("panel_{}_r{}.csv", tag, rep)), format_panel_csv(data));
    }
  }
}

void run_fit(const CommonFlags& f) {
  if (f.in.empty()) throw ConfigError("fit requires --in <panel.csv>");
  const auto cfg = resolve(f);
  const auto data = read_panel_csv(f.in, yearly_grid(), cfg.anchor);
  ensure_dir(f.out);
  const CaseTag c = cfg.cases.front();  // selects the phase-type dimension
  Json summary = Json::array();
  for (const auto& model : cfg.models) {
    const auto fit = fit_model(model, data, cfg, c);
    const auto path = out_path(f.out, "fit_" + model + "_" + case_name(c) + ".json");
    write_text_file(path, fit_to_json(fit).dump(2) + "\n");
    summary.push_back({{"model", model}, {"loglik", fit.loglik}, {"converged", fit.converged}, {"file", path}});
  }
  std::cout << summary.dump() << "\n";
}

void run_price(const CommonFlags& f) {
  if (f.in.empty()) throw ConfigError("price requires --in <fit.json>");
  const auto cfg = resolve(f);
  const auto fit = fit_from_json(read_json_file(f.in));
  const CaseTag c = cfg.cases.front();
  const auto portfolio = make_portfolio(cfg.scenario(c));
  ensure_dir(f.out);
  write_text_file(out_path(f.out, "premiums_" + fit.model + "_" + case_name(c) + ".csv"),
                  format_premium_csv(premium_table(portfolio, fit)));
}

void run_evaluate(const CommonFlags& f) {
  if (f.in.empty()) throw ConfigError("evaluate requires --in <premiums.csv>");
  const auto agg = f.aggregate ? parse_aggregate(*f.aggregate) : Aggregate::insured;
  std::ifstream in(f.in);
  if (!in) throw IoError("cannot open '" + f.in + "' for reading");
  const auto metrics = evaluate_premiums(parse_premium_csv(in), agg);
  std::string out = "model,aggregate,rmse,mae\n";
  for (const auto& [tag, m] : metrics)
    out += fmt::format("{},{},{:.17g},{:.17g}\n", tag, aggregate_name(agg), m.rmse, m.mae);
  std::cout << out;
}

void run_study(const CommonFlags& f) {
  const auto cfg = resolve(f);
  emit_outputs(run_scenario(cfg), f.out);
}

void report_error(const char* kind, const std::string& message) {
  std::cerr << Json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed Poisson group-effect models for disability insurance"};
  app.require_subcommand(1);
  CommonFlags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON configuration file");
    sub->add_option("--seed", flags.seed, "Master seed");
    sub->add_option("--case", flags.case_tag, "Case A, B or C")->check(CLI::IsMember({"A", "B", "C"}));
    sub->add_option("--model", flags.model, "Model or all")
        ->check(CLI::IsMember({"standard", "fixed", "simple", "hierarchical", "phasetype", "all"}));
    sub->add_option("--replications", flags.replications, "Number of replications");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--scale", flags.scale, "Multiplier on total_insured");
    sub->add_option("--aggregate", flags.aggregate, "Premium errors per insured or per group total")
        ->check(CLI::IsMember({"insured", "group"}));
    sub->add_option("--in", flags.in, "Input file");
  };
  auto* simulate = app.add_subcommand("simulate", "Simulate portfolios and panels");
  auto* fit = app.add_subcommand("fit", "Fit models to a panel CSV");
  auto* price = app.add_subcommand("price", "Per-insured premiums under a fitted model");
  auto* evaluate = app.add_subcommand("evaluate", "RMSE and MAE of a premium CSV");
  auto* study = app.add_subcommand("study", "Simulate, fit, price and score end to end");
  for (auto* sub : {simulate, fit, price, evaluate, study}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage_error", e.what());
    return 2;
  }

  try {
    if (simulate->parsed()) run_simulate(flags);
    if (fit->parsed()) run_fit(flags);
    if (price->parsed()) run_price(flags);
    if (evaluate->parsed()) run_evaluate(flags);
    if (study->parsed()) run_study(flags);
  } catch (const Error& e) {
    report_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal_error", e.what());
    return 1;
  }
  return 0;
}
