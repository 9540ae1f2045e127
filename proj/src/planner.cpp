#include "hrank/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "hrank/error.hpp"
#include "hrank/formats.hpp"

namespace hrank {

namespace {

constexpr std::array<std::pair<Variant, const char*>, 4> kVariantNames{{
    {Variant::hrank, "hrank"},
    {Variant::edge, "edge"},
    {Variant::random, "random"},
    {Variant::reverse, "reverse"},
}};

void check_budget(std::size_t filters, std::size_t n_prune) {
  if (n_prune >= filters) {
    throw ConfigError("cannot prune " + std::to_string(n_prune) + " of " + std::to_string(filters) +
                      " filters; at least one must survive");
  }
}

// Filter indices ordered by ascending rank sum, larger index first on ties.
std::vector<std::size_t> ascending_order(std::span<const std::uint64_t> r) {
  std::vector<std::size_t> idx(r.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return r[a] != r[b] ? r[a] < r[b] : a > b;
  });
  return idx;
}

// Descending rank sum, larger index first on ties.
std::vector<std::size_t> descending_order(std::span<const std::uint64_t> r) {
  std::vector<std::size_t> idx(r.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return r[a] != r[b] ? r[a] > r[b] : a > b;
  });
  return idx;
}

LayerSelection partition(std::size_t filters, const std::vector<bool>& pruned) {
  LayerSelection sel;
  for (std::size_t j = 0; j < filters; ++j) (pruned[j] ? sel.prune : sel.keep).push_back(j);
  return sel;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool is_number(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

const char* to_string(Variant v) {
  for (const auto& [k, name] : kVariantNames) {
    if (k == v) return name;
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (const auto& [k, name] : kVariantNames) {
    if (s == name) return k;
  }
  throw UsageError("unknown variant '" + s + "' (hrank, edge, random, reverse)");
}

LayerSelection select_hrank(std::span<const std::uint64_t> rank_sum, std::size_t n_prune) {
  return select_variant(rank_sum, n_prune, Variant::hrank, 0);
}

LayerSelection select_variant(std::span<const std::uint64_t> rank_sum, std::size_t n_prune,
                              Variant variant, std::uint64_t seed) {
  const std::size_t n = rank_sum.size();
  check_budget(n, n_prune);
  std::vector<bool> pruned(n, false);
  switch (variant) {
    case Variant::hrank: {
      const auto order = ascending_order(rank_sum);
      for (std::size_t i = 0; i < n_prune; ++i) pruned[order[i]] = true;
      break;
    }
    case Variant::reverse: {
      const auto order = descending_order(rank_sum);
      for (std::size_t i = 0; i < n_prune; ++i) pruned[order[i]] = true;
      break;
    }
    case Variant::edge: {
      const auto low = ascending_order(rank_sum);
      const auto high = descending_order(rank_sum);
      const std::size_t n_low = (n_prune + 1) / 2;
      for (std::size_t i = 0; i < n_low; ++i) pruned[low[i]] = true;
      std::size_t taken = 0;
      for (std::size_t i = 0; i < n && taken < n_prune - n_low; ++i) {
        if (!pruned[high[i]]) {
          pruned[high[i]] = true;
          ++taken;
        }
      }
      break;
    }
    case Variant::random: {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::mt19937_64 rng(seed);
      for (std::size_t i = 0; i < n_prune; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
        pruned[idx[i]] = true;
      }
      break;
    }
  }
  return partition(n, pruned);
}

std::size_t PruneRate::resolve(std::size_t filters) const {
  if (n_prune) {
    if (*n_prune >= filters) {
      throw ConfigError("cannot prune " + std::to_string(*n_prune) + " of " + std::to_string(filters) +
                        " filters; at least one must survive");
    }
    return *n_prune;
  }
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("pruning rate " + std::to_string(rate) + " outside [0, 1)");
  }
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(filters)));
}

const LayerPlan* PruningPlan::find(int layer_id) const {
  for (const auto& l : layers) {
    if (l.layer_id == layer_id) return &l;
  }
  return nullptr;
}

void PruningPlan::check_invariants() const {
  std::set<int> seen;
  for (const auto& l : layers) {
    const std::string where = "layer " + std::to_string(l.layer_id);
    if (!seen.insert(l.layer_id).second) throw ConsistencyError(where + " planned twice");
    if (!std::is_sorted(l.keep.begin(), l.keep.end()) ||
        !std::is_sorted(l.prune.begin(), l.prune.end())) {
      throw ConsistencyError(where + ": index lists must be sorted");
    }
    if (l.keep.size() + l.prune.size() != l.n_filters) {
      throw ConsistencyError(where + ": keep and prune do not cover all " +
                             std::to_string(l.n_filters) + " filters");
    }
    if (l.keep.empty()) throw ConsistencyError(where + ": every filter pruned");
    std::vector<bool> hit(l.n_filters, false);
    for (const auto* list : {&l.keep, &l.prune}) {
      for (auto j : *list) {
        if (j >= l.n_filters || hit[j]) {
          throw ConsistencyError(where + ": keep and prune overlap or exceed the layer");
        }
        hit[j] = true;
      }
    }
  }
}

PruningPlan PruningPlan::restricted_to(std::span<const int> layer_ids) const {
  PruningPlan out;
  out.provenance = provenance;
  for (const auto& l : layers) {
    if (std::find(layer_ids.begin(), layer_ids.end(), l.layer_id) != layer_ids.end()) {
      out.layers.push_back(l);
    }
  }
  return out;
}

PruningPlan build_plan(const NetworkGraph& net, const std::vector<RankStats>& stats,
                       const PruneRateConfig& rates, Variant variant, std::uint64_t seed) {
  std::map<int, PruneRate> resolved;
  for (const auto& [key, rate] : rates.layers) {
    int id = -1;
    if (is_number(key)) {
      id = std::stoi(key);
      net.node(id);
    } else {
      for (const auto& n : net.nodes()) {
        if (n.name == key) id = n.id;
      }
      if (id < 0) throw ConfigError("rate names unknown layer '" + key + "'");
    }
    const LayerNode& node = net.node(id);
    if (!node.prunable) {
      throw ConfigError("rate given for layer " + std::to_string(id) + " ('" + node.name +
                        "') which is not prunable");
    }
    if (!resolved.emplace(id, rate).second) {
      throw ConfigError("layer " + std::to_string(id) + " has more than one rate entry");
    }
  }
  if (rates.default_rate) {
    for (const auto& s : stats) resolved.emplace(s.layer_id, PruneRate{std::nullopt, *rates.default_rate});
  }

  PruningPlan plan;
  plan.provenance = {variant, seed, stats_fingerprint(stats), ""};
  for (const auto& [id, rate] : resolved) {
    const auto it = std::find_if(stats.begin(), stats.end(),
                                 [id = id](const RankStats& s) { return s.layer_id == id; });
    if (it == stats.end()) {
      throw ConfigError("no rank statistics for layer " + std::to_string(id) + " ('" +
                        net.node(id).name + "')");
    }
    const LayerNode& node = net.node(id);
    if (!node.prunable) {
      throw ConfigError("layer " + std::to_string(id) + " ('" + node.name + "') is not prunable");
    }
    if (it->filters() != node.conv().filters.n_out()) {
      throw ConsistencyError("rank statistics for layer " + std::to_string(id) + " cover " +
                             std::to_string(it->filters()) + " filters, layer has " +
                             std::to_string(node.conv().filters.n_out()));
    }
    const std::size_t n_prune = rate.resolve(it->filters());
    auto sel = select_variant(it->rank_sum, n_prune, variant,
                              mix(seed, static_cast<std::uint64_t>(id)));
    plan.layers.push_back({id, node.name, it->filters(), std::move(sel.keep), std::move(sel.prune)});
  }
  plan.check_invariants();
  return plan;
}

const LayerFreeze* FreezeMask::find(int layer_id) const {
  for (const auto& l : layers) {
    if (l.layer_id == layer_id) return &l;
  }
  return nullptr;
}

std::size_t FreezeMask::frozen_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(std::count(l.trainable.begin(), l.trainable.end(), false));
  return n;
}

FreezeMask build_freeze_mask(const PruningPlan& plan, const std::vector<RankStats>& stats,
                             double freeze_fraction) {
  if (!(freeze_fraction >= 0.0 && freeze_fraction <= 1.0)) {
    throw ConfigError("freeze fraction " + std::to_string(freeze_fraction) + " outside [0, 1]");
  }
  const std::string fp = stats_fingerprint(stats);
  if (plan.provenance.stats_fingerprint != fp) {
    throw ConsistencyError("plan was built from rank statistics " +
                           plan.provenance.stats_fingerprint.substr(0, 12) + ", given " +
                           fp.substr(0, 12));
  }
  FreezeMask mask;
  mask.freeze_fraction = freeze_fraction;
  for (const auto& l : plan.layers) {
    const auto it = std::find_if(stats.begin(), stats.end(),
                                 [&](const RankStats& s) { return s.layer_id == l.layer_id; });
    if (it == stats.end()) {
      throw ConsistencyError("no rank statistics for planned layer " + std::to_string(l.layer_id));
    }
    const std::size_t n_freeze = static_cast<std::size_t>(
        std::floor(freeze_fraction * static_cast<double>(l.n_keep())));
    std::vector<std::size_t> pos(l.n_keep());
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
      const auto ra = it->rank_sum[l.keep[a]];
      const auto rb = it->rank_sum[l.keep[b]];
      return ra != rb ? ra > rb : a < b;
    });
    LayerFreeze lf{l.layer_id, std::vector<bool>(l.n_keep(), true)};
    for (std::size_t i = 0; i < n_freeze; ++i) lf.trainable[pos[i]] = false;
    mask.layers.push_back(std::move(lf));
  }
  return mask;
}

}  // namespace hrank
