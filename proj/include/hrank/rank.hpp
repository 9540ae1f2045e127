#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hrank/data.hpp"
#include "hrank/graph.hpp"
#include "hrank/svd.hpp"

namespace hrank {

/// Singular values above tau = scale * max(h, w) * eps * sigma_max count
/// toward the rank.
struct RankTolerance {
  double scale = 1.0;

  double threshold(std::size_t rows, std::size_t cols, double sigma_max) const;
  std::string describe() const;
  friend bool operator==(const RankTolerance&, const RankTolerance&) = default;
};

std::size_t numerical_rank(const Eigen::MatrixXd& map, const RankTolerance& tol = {});
std::size_t numerical_rank(std::span<const double> row_major, std::size_t rows, std::size_t cols,
                           const RankTolerance& tol = {});

/// Accumulated feature-map rank for every filter of one conv layer: the sum
/// over the sampled images of the rank of that filter's map.
struct RankStats {
  int layer_id = -1;
  std::string layer_name;
  std::vector<std::uint64_t> rank_sum;
  std::size_t g_used = 0;
  std::size_t height = 0;  // feature-map extent at the capture point
  std::size_t width = 0;
  CapturePoint capture = CapturePoint::post_block;
  RankTolerance tolerance;

  std::size_t filters() const { return rank_sum.size(); }
  double mean(std::size_t j) const;
  friend bool operator==(const RankStats&, const RankStats&) = default;
};

struct RankEstimateOptions {
  std::size_t g = 500;
  std::size_t batch_size = 50;
  CapturePoint capture = CapturePoint::post_block;
  std::uint64_t seed = 0;
  RankTolerance tolerance;
  std::size_t workers = 1;
  std::vector<int> layers;  // empty: every prunable conv
};

/// Samples g images without replacement (seeded) and accumulates ranks.
std::vector<RankStats> estimate_ranks(const NetworkGraph& net, const DatasetSource& data,
                                      const RankEstimateOptions& opts);

/// Same accumulation over an explicit image list; opts.g and opts.seed are ignored.
std::vector<RankStats> estimate_ranks_on(const NetworkGraph& net, const DatasetSource& data,
                                         std::span<const std::size_t> indices,
                                         const RankEstimateOptions& opts);

/// Human-readable per-layer summary: mean/min/max of the per-filter mean rank
/// and a histogram over integer rank bins.
std::string rank_report_text(const std::vector<RankStats>& stats);

/// Tab-separated table, one row per filter: layer_id, filter_idx, rank_sum, g, mean.
std::string rank_report_table(const std::vector<RankStats>& stats);

}  // namespace hrank
