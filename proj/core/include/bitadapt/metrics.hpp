#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>

#include "bitadapt/meta.hpp"

namespace bitadapt {

inline constexpr const char* kMetricsHeader = "epoch,branch,b_w,b_a,loss,kd_loss,accuracy,backprops,wall_ms";

/// One CSV line without the newline; reals use fixed 6 decimals.
std::string format_metric_row(const MetricRow& row);

void write_metrics(std::ostream& out, std::span<const MetricRow> rows);
void write_metrics(const std::filesystem::path& path, std::span<const MetricRow> rows);

}  // namespace bitadapt
