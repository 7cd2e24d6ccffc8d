#pragma once

// Panel CSV: one row per cell,
//   group_id,characteristic,interval_index,t_right,exposure,count

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mixpois/model.hpp"

namespace mixpois {

inline constexpr const char* kPanelHeader = "group_id,characteristic,interval_index,t_right,exposure,count";

/// Age at which an interval's covariates are evaluated.
inline double anchor_age(const std::vector<double>& grid, int interval, double t_right, CovariateAnchor anchor) {
  if (anchor == CovariateAnchor::right_endpoint) return t_right;
  if (interval >= 1 && static_cast<std::size_t>(interval) < grid.size())
    return 0.5 * (grid[interval - 1] + grid[interval]);
  return t_right - 0.5;
}

inline std::string format_panel_csv(const PortfolioDataset& data) {
  std::string out = std::string(kPanelHeader) + "\n";
  for (const auto& g : data.groups) {
    for (auto c : kCharacteristics) {
      for (const auto& cell : g.of(c)) {
        out += fmt::format("{},{},{},{:.17g},{:.17g},{}\n", g.group_id, name(c), cell.interval, cell.t_right,
                           cell.exposure, cell.count);
      }
    }
  }
  return out;
}

inline void write_panel_csv(const PortfolioDataset& data, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << format_panel_csv(data);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

/// Parses a panel. Covariate rows are rebuilt from the polynomial bases at
/// the anchor age of each interval of `grid`.
inline PortfolioDataset parse_panel_csv(std::istream& is, std::vector<double> grid,
                                        CovariateAnchor anchor = CovariateAnchor::right_endpoint) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("panel CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != kPanelHeader) throw DataError("unexpected panel header: '" + line + "'");

  PortfolioDataset data;
  data.grid = std::move(grid);
  std::map<std::string, std::size_t> position;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw DataError(fmt::format("panel line {}: expected 6 fields, got {}", lineno, f.size()));
    ObservationCell cell;
    try {
      cell.interval = std::stoi(f[2]);
      cell.t_right = std::stod(f[3]);
      cell.exposure = std::stod(f[4]);
      cell.count = std::stoll(f[5]);
    } catch (const std::exception&) {
      throw DataError(fmt::format("panel line {}: malformed number", lineno));
    }
    const auto c = parse_characteristic(f[1]);
    cell.covariates = basis_row(c, anchor_age(data.grid, cell.interval, cell.t_right, anchor));
    auto [it, inserted] = position.try_emplace(f[0], data.groups.size());
    if (inserted) {
      data.groups.emplace_back();
      data.groups.back().group_id = f[0];
    }
    data.groups[it->second].of(c).push_back(std::move(cell));
  }
  data.validate();
  return data;
}

inline PortfolioDataset read_panel_csv(const std::string& path, std::vector<double> grid,
                                       CovariateAnchor anchor = CovariateAnchor::right_endpoint) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return parse_panel_csv(is, std::move(grid), anchor);
}

}  // namespace mixpois
