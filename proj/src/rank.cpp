#include "hrank/rank.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include "hrank/error.hpp"

namespace hrank {

double RankTolerance::threshold(std::size_t rows, std::size_t cols, double sigma_max) const {
  return scale * static_cast<double>(std::max(rows, cols)) *
         std::numeric_limits<double>::epsilon() * sigma_max;
}

std::string RankTolerance::describe() const {
  std::ostringstream os;
  os << "sigma > " << scale << " * max(h,w) * eps * sigma_max";
  return os.str();
}

std::size_t numerical_rank(std::span<const double> row_major, std::size_t rows, std::size_t cols,
                           const RankTolerance& tol) {
  const auto sigma = singular_values(row_major, rows, cols);
  if (sigma.empty() || sigma.front() == 0.0) return 0;
  const double tau = tol.threshold(rows, cols, sigma.front());
  return static_cast<std::size_t>(
      std::count_if(sigma.begin(), sigma.end(), [tau](double s) { return s > tau; }));
}

std::size_t numerical_rank(const Eigen::MatrixXd& map, const RankTolerance& tol) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor rm = map;
  return numerical_rank(std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())),
                        static_cast<std::size_t>(map.rows()), static_cast<std::size_t>(map.cols()),
                        tol);
}

double RankStats::mean(std::size_t j) const {
  return g_used == 0 ? 0.0 : static_cast<double>(rank_sum.at(j)) / static_cast<double>(g_used);
}

std::vector<RankStats> estimate_ranks(const NetworkGraph& net, const DatasetSource& data,
                                      const RankEstimateOptions& opts) {
  if (opts.g == 0) throw UsageError("g must be at least 1");
  const auto indices = sample(data, opts.g, opts.seed);
  return estimate_ranks_on(net, data, indices, opts);
}

std::vector<RankStats> estimate_ranks_on(const NetworkGraph& net, const DatasetSource& data,
                                         std::span<const std::size_t> indices,
                                         const RankEstimateOptions& opts) {
  if (indices.empty()) throw UsageError("rank estimation needs at least one image");
  if (opts.batch_size == 0) throw UsageError("batch size must be at least 1");
  std::vector<int> layers = opts.layers.empty() ? net.prunable_ids() : opts.layers;
  for (int id : layers) {
    if (net.node(id).kind != LayerKind::conv) {
      throw UsageError("layer " + std::to_string(id) + " is not a conv layer");
    }
  }

  const auto shapes = infer_shapes(net, 1);
  std::vector<RankStats> stats;
  for (int id : layers) {
    RankStats s;
    s.layer_id = id;
    s.layer_name = net.node(id).name;
    const Shape4& shape = shapes[static_cast<std::size_t>(capture_node(net, id, opts.capture))];
    s.rank_sum.assign(shape.c, 0);
    s.height = shape.h;
    s.width = shape.w;
    s.capture = opts.capture;
    s.tolerance = opts.tolerance;
    stats.push_back(std::move(s));
  }
  const std::set<int> capture(layers.begin(), layers.end());

  const std::size_t workers = std::max<std::size_t>(1, opts.workers);
  for (const auto& batch_idx : make_batches(indices, opts.batch_size)) {
    const ForwardResult fr = forward(net, data.batch(batch_idx), capture, opts.capture);
    // One task per (layer, image); each worker keeps private integer sums so
    // the reduction is exact and independent of scheduling.
    struct Task {
      std::size_t layer;
      std::size_t image;
    };
    std::vector<Task> tasks;
    for (std::size_t l = 0; l < stats.size(); ++l) {
      for (std::size_t i = 0; i < batch_idx.size(); ++i) tasks.push_back({l, i});
    }
    std::vector<std::vector<std::vector<std::uint64_t>>> partial(workers);
    auto run = [&](std::size_t w) {
      auto& local = partial[w];
      local.resize(stats.size());
      for (std::size_t l = 0; l < stats.size(); ++l) local[l].assign(stats[l].filters(), 0);
      for (std::size_t t = w; t < tasks.size(); t += workers) {
        const auto& task = tasks[t];
        const RankStats& s = stats[task.layer];
        const Tensor4& maps = fr.captured.at(s.layer_id);
        for (std::size_t j = 0; j < s.filters(); ++j) {
          local[task.layer][j] += numerical_rank(maps.plane(task.image, j), s.height, s.width,
                                                 opts.tolerance);
        }
      }
    };
    if (workers == 1) {
      run(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
      for (auto& t : pool) t.join();
    }
    for (const auto& local : partial) {
      for (std::size_t l = 0; l < stats.size(); ++l) {
        for (std::size_t j = 0; j < stats[l].filters(); ++j) stats[l].rank_sum[j] += local[l][j];
      }
    }
  }
  for (auto& s : stats) s.g_used = indices.size();
  return stats;
}

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string rank_report_text(const std::vector<RankStats>& stats) {
  std::ostringstream os;
  for (const auto& s : stats) {
    if (s.filters() == 0) continue;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double total = 0.0;
    const std::size_t bins = std::min(s.height, s.width) + 1;
    std::vector<std::size_t> hist(bins, 0);
    for (std::size_t j = 0; j < s.filters(); ++j) {
      const double m = s.mean(j);
      lo = std::min(lo, m);
      hi = std::max(hi, m);
      total += m;
      hist[std::min(bins - 1, static_cast<std::size_t>(std::floor(m)))]++;
    }
    os << "layer " << s.layer_id << " (" << s.layer_name << ") filters=" << s.filters()
       << " map=" << s.height << "x" << s.width << " g=" << s.g_used
       << " mean=" << fixed2(total / static_cast<double>(s.filters())) << " min=" << fixed2(lo)
       << " max=" << fixed2(hi) << " hist=[";
    for (std::size_t b = 0; b < bins; ++b) os << (b ? " " : "") << hist[b];
    os << "]\n";
  }
  return os.str();
}

std::string rank_report_table(const std::vector<RankStats>& stats) {
  std::ostringstream os;
  os << "layer_id\tfilter_idx\trank_sum\tg\tmean\n";
  for (const auto& s : stats) {
    for (std::size_t j = 0; j < s.filters(); ++j) {
      os << s.layer_id << '\t' << j << '\t' << s.rank_sum[j] << '\t' << s.g_used << '\t'
         << fixed2(s.mean(j)) << '\n';
    }
  }
  return os.str();
}

}  // namespace hrank
