#pragma once

#include <string>
#include <vector>

#include "hrank/planner.hpp"
#include "hrank/rank.hpp"
#include "hrank/surgeon.hpp"

namespace hrank {

// JSON text forms of the toolkit's artifacts. Every parser throws
// FormatError naming the offending field.

/// SHA-256 over the canonical JSON of the statistics (fingerprint fields excluded).
std::string stats_fingerprint(const std::vector<RankStats>& stats);

struct RankStatsFile {
  std::string model_fingerprint;
  std::string stats_fingerprint;
  std::uint64_t seed = 0;
  std::vector<RankStats> stats;
};

std::string rank_stats_to_json(const std::vector<RankStats>& stats,
                               const std::string& model_fingerprint, std::uint64_t seed);
/// Also checks the embedded fingerprint against the content (ConsistencyError).
RankStatsFile rank_stats_from_json(const std::string& text);

std::string rate_config_to_json(const PruneRateConfig& cfg);
PruneRateConfig rate_config_from_json(const std::string& text);

std::string plan_to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const std::string& text);

std::string freeze_mask_to_json(const FreezeMask& mask);
FreezeMask freeze_mask_from_json(const std::string& text);

std::string complexity_to_json(const ComplexityReport& report);
ComplexityReport complexity_from_json(const std::string& text);

}  // namespace hrank
