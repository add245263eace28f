#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedrep {

// One record per (round, agent). agent_id == -1 marks the aggregate row that
// averages the per-agent columns for that round.
struct MetricsRow {
  long round = 0;
  int agent_id = 0;
  double value_mse = 0.0;
  double tracking_error = 0.0;
  double lyapunov = 0.0;
  double phi_drift = 0.0;
  double alpha_t = 0.0;
  double beta_t = 0.0;
  long episodes_elapsed = 0;
  double wall_seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "round,agent_id,value_mse,tracking_error,lyapunov,phi_drift,alpha_t,"
    "beta_t,episodes_elapsed,wall_seconds";

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string metrics_row_to_csv(const MetricsRow& r) {
  std::string line;
  line += std::to_string(r.round);
  line += ',';
  line += std::to_string(r.agent_id);
  line += ',';
  line += format_double(r.value_mse);
  line += ',';
  line += format_double(r.tracking_error);
  line += ',';
  line += format_double(r.lyapunov);
  line += ',';
  line += format_double(r.phi_drift);
  line += ',';
  line += format_double(r.alpha_t);
  line += ',';
  line += format_double(r.beta_t);
  line += ',';
  line += std::to_string(r.episodes_elapsed);
  line += ',';
  line += format_double(r.wall_seconds);
  return line;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics: cannot open '" + path + "'");
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << metrics_row_to_csv(r) << '\n';
  if (!out) throw std::runtime_error("metrics: write failed for '" + path + "'");
}

}  // namespace fedrep
