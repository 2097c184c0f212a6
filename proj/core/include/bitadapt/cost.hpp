#pragma once

#include <cstdint>
#include <string>

#include "bitadapt/checkpoint.hpp"
#include "bitadapt/models.hpp"
#include "bitadapt/quant.hpp"

namespace bitadapt {

/// Training and storage cost of one bitwidth-adaptive model.
struct CostReport {
  std::string engine;
  std::size_t pairs = 0;                  // T: bitwidth pairs the model serves
  std::size_t branches = 0;               // M
  std::size_t parameter_count = 0;
  std::uint64_t storage_bytes = 0;        // Theta: checkpoint payload
  double bn_fraction = 0.0;               // zeta
  double backprops_per_update = 0.0;      // measured
  double inner_backprops_per_update = 0.0;
  std::size_t parameter_sets = 1;         // stored copies of the parameters
};

/// Static part of the report. Throws CheckpointError when the checkpoint
/// holds anything beyond exactly one parameter set for `spec`.
CostReport describe_cost(const ModelSpec& spec, const Checkpoint& ckpt, const BitwidthTaskSet& tasks,
                         std::size_t branches);

std::string format_cost_report(const CostReport& report);

}  // namespace bitadapt
