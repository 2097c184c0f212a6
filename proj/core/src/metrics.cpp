#include "bitadapt/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

#include "bitadapt/errors.hpp"

namespace bitadapt {

std::string format_metric_row(const MetricRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%s,%.6f,%.6f,%.6f,%" PRIu64 ",%.6f", row.epoch, row.branch,
                row.task.w.to_string().c_str(), row.task.a.to_string().c_str(), row.loss, row.kd_loss, row.accuracy,
                row.backprops, row.wall_ms);
  return buf;
}

void write_metrics(std::ostream& out, std::span<const MetricRow> rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metric_row(r) << '\n';
}

void write_metrics(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot create metrics file " + path.string());
  write_metrics(out, rows);
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace bitadapt
