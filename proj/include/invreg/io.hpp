#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "invreg/grid.hpp"
#include "invreg/observation.hpp"
#include "invreg/sweep.hpp"

namespace invreg {

inline std::ofstream open_output(const std::string& path) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  return out;
}

/// Row-major matrix CSV with a size header (nx, ny, hx, hy).
inline void write_cell_matrix_csv(const std::string& path, const Grid& g,
                                  std::span<const double> cells) {
  std::ofstream out = open_output(path);
  out << "nx,ny,hx,hy\n"
      << g.nx << "," << g.ny << "," << format_double(g.hx) << "," << format_double(g.hy)
      << "\n";
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i)
      out << (i ? "," : "") << format_double(cells[g.cell_index(i, j)]);
    out << "\n";
  }
}

inline void write_node_matrix_csv(const std::string& path, const Grid& g,
                                  std::span<const double> nodes) {
  std::ofstream out = open_output(path);
  out << "nx,ny,hx,hy\n"
      << g.nx + 1 << "," << g.ny + 1 << "," << format_double(g.hx) << ","
      << format_double(g.hy) << "\n";
  for (int j = 0; j <= g.ny; ++j) {
    for (int i = 0; i <= g.nx; ++i)
      out << (i ? "," : "") << format_double(nodes[g.node_index(i, j)]);
    out << "\n";
  }
}

/// Labeled observation vector: block,index,value rows.
inline void write_observation_csv(const std::string& path, const ObservationVector& y) {
  std::ofstream out = open_output(path);
  out << "block,index,value\n";
  for (const auto& b : y.blocks)
    for (std::size_t j = 0; j < b.length; ++j)
      out << b.name << "," << j << "," << format_double(y.values[b.offset + j]) << "\n";
}

inline void write_report_csv(const std::string& path, const ConvergenceReport& rep) {
  std::ofstream out = open_output(path);
  out << "delta,alpha,error,discrepancy,b_norm,iterations,feasible\n";
  for (const auto& r : rep.rows)
    out << format_double(r.delta) << "," << format_double(r.alpha) << ","
        << format_double(r.error) << "," << format_double(r.discrepancy_value) << ","
        << format_double(r.b_norm) << "," << r.iterations << "," << (r.feasible ? 1 : 0)
        << "\n";
}

inline nlohmann::json report_to_json(const ConvergenceReport& rep) {
  nlohmann::json j;
  j["base_seed"] = rep.base_seed;
  j["b_norm_bounded"] = rep.b_norm_bounded;
  j["error_decreased"] = rep.error_decreased;
  j["rule_violated"] = rep.rule_violated;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    nlohmann::json row;
    row["delta"] = r.delta;
    row["alpha"] = r.alpha;
    row["error"] = r.error;
    row["discrepancy"] = r.discrepancy_value;
    row["b_norm"] = r.b_norm;
    row["iterations"] = r.iterations;
    row["feasible"] = r.feasible;
    row["ratio_delta2_over_alpha"] = r.ratio_quadratic;
    row["ratio_delta_over_alpha"] = r.ratio_linear;
    row["cost_trace"] = r.cost_trace;
    if (!r.failure.empty()) row["failure"] = r.failure;
    j["rows"].push_back(std::move(row));
  }
  return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out = open_output(path);
  out << j.dump(2) << "\n";
}

}  // namespace invreg
