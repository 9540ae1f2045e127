#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hrank/graph.hpp"
#include "hrank/planner.hpp"

namespace hrank {

/// Builds the compact network that keeps only the planned filters. Node ids,
/// names and block structure are unchanged; downstream consumers lose the
/// matching input channels. Throws ConsistencyError when the plan names
/// layers or filter counts the network does not have (or was made for a
/// different model) and PlanError when it targets a non-prunable layer.
NetworkGraph apply_plan(const NetworkGraph& net, const PruningPlan& plan);

struct ComplexityOptions {
  bool count_bn_params = true;  // BN scale and shift count as parameters
};

struct LayerComplexity {
  int layer_id = -1;
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
  friend bool operator==(const LayerComplexity&, const LayerComplexity&) = default;
};

/// FLOPs are multiply-accumulates of conv and dense layers for one image.
struct ComplexityReport {
  ImageDims input;
  bool bn_params_counted = true;
  std::uint64_t total_flops = 0;
  std::uint64_t total_params = 0;
  std::vector<LayerComplexity> layers;  // nodes with flops or params only
  friend bool operator==(const ComplexityReport&, const ComplexityReport&) = default;
};

ComplexityReport count_complexity(const NetworkGraph& net, const ComplexityOptions& opts = {});
ComplexityReport count_complexity(const NetworkGraph& net, const ImageDims& input,
                                  const ComplexityOptions& opts = {});

struct ReductionReport {
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
  std::uint64_t params_before = 0;
  std::uint64_t params_after = 0;
  double flops_pr = 0.0;   // percent removed
  double params_pr = 0.0;

  std::string str() const;
};

/// Percentages are (1 - after / before) * 100 rounded to 0.1. Throws
/// NumericError when a before-count is zero.
ReductionReport reduction_report(const ComplexityReport& before, const ComplexityReport& after);

}  // namespace hrank
