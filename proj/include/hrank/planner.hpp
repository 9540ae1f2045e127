#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrank/graph.hpp"
#include "hrank/rank.hpp"

namespace hrank {

/// Filter selection strategy. `hrank` removes the lowest-rank filters; the
/// others are ablation baselines.
enum class Variant { hrank, edge, random, reverse };
const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Keep/prune partition of one layer's filters, both sorted ascending.
struct LayerSelection {
  std::vector<std::size_t> keep;
  std::vector<std::size_t> prune;
  friend bool operator==(const LayerSelection&, const LayerSelection&) = default;
};

/// Prunes the n_prune filters with the smallest rank sums; among equal sums
/// the larger filter index goes first. Throws ConfigError if n_prune >= filters.
LayerSelection select_hrank(std::span<const std::uint64_t> rank_sum, std::size_t n_prune);

/// reverse: largest sums (larger index on ties); random: uniform subset under
/// `seed`; edge: ceil(n/2) smallest plus floor(n/2) largest.
LayerSelection select_variant(std::span<const std::uint64_t> rank_sum, std::size_t n_prune,
                              Variant variant, std::uint64_t seed);

/// Per-layer pruning amount: an absolute count or a fraction (floor(rate * n)).
struct PruneRate {
  std::optional<std::size_t> n_prune;
  double rate = 0.0;

  std::size_t resolve(std::size_t filters) const;
  friend bool operator==(const PruneRate&, const PruneRate&) = default;
};

/// Layers are addressed by node id ("12") or by layer name.
struct PruneRateConfig {
  std::optional<double> default_rate;
  std::map<std::string, PruneRate> layers;
  friend bool operator==(const PruneRateConfig&, const PruneRateConfig&) = default;
};

struct LayerPlan {
  int layer_id = -1;
  std::string layer_name;
  std::size_t n_filters = 0;
  std::vector<std::size_t> keep;
  std::vector<std::size_t> prune;

  std::size_t n_keep() const { return keep.size(); }
  std::size_t n_prune() const { return prune.size(); }
  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

struct PlanProvenance {
  Variant variant = Variant::hrank;
  std::uint64_t seed = 0;
  std::string stats_fingerprint;
  std::string model_fingerprint;
  friend bool operator==(const PlanProvenance&, const PlanProvenance&) = default;
};

struct PruningPlan {
  std::vector<LayerPlan> layers;  // ascending layer id
  PlanProvenance provenance;

  const LayerPlan* find(int layer_id) const;
  /// Partition laws of every layer; throws ConsistencyError.
  void check_invariants() const;
  /// Same provenance, only the listed layers.
  PruningPlan restricted_to(std::span<const int> layer_ids) const;
  friend bool operator==(const PruningPlan&, const PruningPlan&) = default;
};

/// Plans every layer covered by `rates` independently. Layers without a rate
/// (and no default) are left out of the plan.
PruningPlan build_plan(const NetworkGraph& net, const std::vector<RankStats>& stats,
                       const PruneRateConfig& rates, Variant variant, std::uint64_t seed);

/// Trainability of the surviving filters of each planned layer, indexed by
/// position in the pruned layer (i.e. by position in LayerPlan::keep).
struct LayerFreeze {
  int layer_id = -1;
  std::vector<bool> trainable;
  friend bool operator==(const LayerFreeze&, const LayerFreeze&) = default;
};

struct FreezeMask {
  double freeze_fraction = 0.0;
  std::vector<LayerFreeze> layers;

  const LayerFreeze* find(int layer_id) const;
  std::size_t frozen_count() const;
  friend bool operator==(const FreezeMask&, const FreezeMask&) = default;
};

/// Freezes floor(fraction * n_keep) kept filters per layer, highest rank sum
/// first (smaller index on ties). Throws ConsistencyError when the plan was
/// not built from these stats.
FreezeMask build_freeze_mask(const PruningPlan& plan, const std::vector<RankStats>& stats,
                             double freeze_fraction);

}  // namespace hrank
