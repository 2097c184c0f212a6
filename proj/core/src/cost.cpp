#include "bitadapt/cost.hpp"

#include <cstdio>

#include "bitadapt/errors.hpp"

namespace bitadapt {

CostReport describe_cost(const ModelSpec& spec, const Checkpoint& ckpt, const BitwidthTaskSet& tasks,
                         std::size_t branches) {
  try {
    check_params(spec, ckpt.params);
  } catch (const ShapeError& e) {
    throw CheckpointError(CheckpointError::Kind::malformed, std::string("not a single parameter set: ") + e.what());
  }
  CostReport r;
  r.pairs = tasks.valid_pairs().size();
  r.branches = branches;
  r.parameter_count = spec.parameter_count();
  r.storage_bytes = ckpt.payload_bytes;
  if (r.storage_bytes != r.parameter_count * sizeof(float)) {
    throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint payload does not match the model size");
  }
  r.bn_fraction = r.parameter_count ? static_cast<double>(spec.batch_norm_parameter_count()) /
                                          static_cast<double>(r.parameter_count)
                                    : 0.0;
  r.parameter_sets = 1;
  return r;
}

std::string format_cost_report(const CostReport& r) {
  char buf[768];
  std::snprintf(buf, sizeof buf,
                "engine                      %s\n"
                "bitwidth pairs (T)          %zu\n"
                "branches per update (M)     %zu\n"
                "backprops per update        %.3f\n"
                "inner backprops per update  %.3f\n"
                "parameters                  %zu\n"
                "parameter sets stored       %zu\n"
                "storage bytes (Theta)       %llu\n"
                "BN parameter fraction       %.6f\n",
                r.engine.c_str(), r.pairs, r.branches, r.backprops_per_update, r.inner_backprops_per_update,
                r.parameter_count, r.parameter_sets, static_cast<unsigned long long>(r.storage_bytes), r.bn_fraction);
  return buf;
}

}  // namespace bitadapt
