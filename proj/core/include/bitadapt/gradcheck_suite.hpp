#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bitadapt/grad_check.hpp"

namespace bitadapt {

/// One finite-difference comparison. Excluded entries go through
/// straight-through rounding, so their mismatch is reported but not judged.
struct GradCheckEntry {
  std::string name;
  bool excluded = false;
  GradCheckReport report;
};

std::vector<std::string> gradcheck_case_names();

/// Runs every case whose name contains `filter` (all when empty), in double.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed, std::string_view filter = {});

/// `trials` independent runs merged per case: worst max error, averaged
/// mean error, coordinates summed.
std::vector<GradCheckEntry> run_gradcheck_trials(std::uint64_t seed, std::size_t trials, std::string_view filter = {});

/// True when every non-excluded entry passed.
bool gradcheck_suite_passed(const std::vector<GradCheckEntry>& entries);

std::string format_gradcheck_table(const std::vector<GradCheckEntry>& entries);

}  // namespace bitadapt
