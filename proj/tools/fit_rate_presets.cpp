// Regenerates configs/rates/*.json. Each file reconstructs one published
// HRank operating point: per-layer rates ramp linearly from `a` at the first
// prunable layer to `b` at the last, with (a, b) fitted to the published
// FLOPs and parameter reductions.
//
//   fit_rate_presets <output-dir>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "hrank/planner.hpp"
#include "hrank/presets.hpp"
#include "hrank/surgeon.hpp"

using namespace hrank;

namespace {

struct Row {
  const char* file;
  const char* preset;
  double flops_pr;   // percent
  double params_pr;  // percent
  const char* published;
};

const Row kRows[] = {
    {"vgg16_53.5.json", "vgg16_cifar", 53.5, 82.9, "145.61M(53.5%) 2.51M(82.9%)"},
    {"vgg16_65.3.json", "vgg16_cifar", 65.3, 82.1, "108.61M(65.3%) 2.64M(82.1%)"},
    {"vgg16_76.5.json", "vgg16_cifar", 76.5, 92.0, "73.70M(76.5%) 1.78M(92.0%)"},
    {"googlenet_54.9.json", "googlenet_cifar", 54.9, 55.4, "0.69B(54.9%) 2.74M(55.4%)"},
    {"googlenet_70.4.json", "googlenet_cifar", 70.4, 69.8, "0.45B(70.4%) 1.86M(69.8%)"},
    {"resnet56_29.3.json", "resnet56", 29.3, 16.8, "88.72M(29.3%) 0.71M(16.8%)"},
    {"resnet56_50.0.json", "resnet56", 50.0, 42.4, "62.72M(50.0%) 0.49M(42.4%)"},
    {"resnet56_74.1.json", "resnet56", 74.1, 68.1, "32.52M(74.1%) 0.27M(68.1%)"},
    {"resnet110_41.2.json", "resnet110", 41.2, 39.4, "148.70M(41.2%) 1.04M(39.4%)"},
    {"resnet110_58.2.json", "resnet110", 58.2, 59.2, "105.70M(58.2%) 0.70M(59.2%)"},
    {"resnet110_68.6.json", "resnet110", 68.6, 68.7, "79.30M(68.6%) 0.53M(68.7%)"},
    {"densenet40_40.8.json", "densenet40", 40.8, 36.5, "167.41M(40.8%) 0.66M(36.5%)"},
    {"densenet40_61.0.json", "densenet40", 61.0, 53.8, "110.15M(61.0%) 0.48M(53.8%)"},
};

constexpr double kMaxRate = 0.95;

std::vector<double> ramp(std::size_t k, double a, double b) {
  std::vector<double> r(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double t = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
    r[i] = std::round(std::clamp(a + (b - a) * t, 0.0, kMaxRate) * 100.0) / 100.0;
  }
  return r;
}

ReductionReport evaluate_rates(const NetworkGraph& net, const ComplexityReport& base,
                               const std::vector<int>& ids, const std::vector<double>& rates) {
  PruningPlan plan;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::size_t n = net.node(ids[i]).conv().filters.n_out();
    const std::size_t k = PruneRate{std::nullopt, rates[i]}.resolve(n);
    LayerPlan lp{ids[i], net.node(ids[i]).name, n, {}, {}};
    for (std::size_t j = 0; j < n; ++j) (j < n - k ? lp.keep : lp.prune).push_back(j);
    plan.layers.push_back(std::move(lp));
  }
  return reduction_report(base, count_complexity(apply_plan(net, plan)));
}

struct Fit {
  double a = 0, b = 0, err = 1e300;
  ReductionReport report;
};

Fit fit(const NetworkGraph& net, const ComplexityReport& base, const std::vector<int>& ids, const Row& row) {
  Fit best;
  auto consider = [&](double a, double b) {
    const auto r = evaluate_rates(net, base, ids, ramp(ids.size(), a, b));
    // FLOPs reduction is the headline figure; weight it above parameters.
    const double err = 4.0 * std::pow(r.flops_pr - row.flops_pr, 2) + std::pow(r.params_pr - row.params_pr, 2);
    if (err < best.err) best = {a, b, err, r};
  };
  for (double a = 0.0; a <= kMaxRate + 1e-9; a += 0.05) {
    for (double b = 0.0; b <= kMaxRate + 1e-9; b += 0.05) consider(a, b);
  }
  const Fit coarse = best;
  for (double a = coarse.a - 0.05; a <= coarse.a + 0.05 + 1e-9; a += 0.01) {
    for (double b = coarse.b - 0.05; b <= coarse.b + 0.05 + 1e-9; b += 0.01) {
      if (a >= 0 && b >= 0) consider(a, b);
    }
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: fit_rate_presets <output-dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  for (const auto& row : kRows) {
    const auto net = build_preset(row.preset, 10, {1.0, 0, false});
    const auto base = count_complexity(net);
    const auto ids = net.prunable_ids();
    const Fit f = fit(net, base, ids, row);
    const auto rates = ramp(ids.size(), f.a, f.b);

    nlohmann::ordered_json j;
    j["format"] = "hrank-rates";
    j["description"] = std::string("Reconstructed rates for ") + row.preset + ", published HRank row " +
                       row.published + ". Linear ramp fitted to that row; not the original per-layer rates.";
    char achieved[96];
    std::snprintf(achieved, sizeof achieved, "FLOPs PR %.1f%%, params PR %.1f%%", f.report.flops_pr,
                  f.report.params_pr);
    j["achieved"] = achieved;
    nlohmann::ordered_json layers = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) layers[net.node(ids[i]).name] = rates[i];
    j["layers"] = layers;
    std::ofstream(dir / row.file) << j.dump(2) << "\n";
    std::printf("%-24s target %5.1f%% %5.1f%%  achieved %5.1f%% %5.1f%%  ramp %.2f -> %.2f\n", row.file,
                row.flops_pr, row.params_pr, f.report.flops_pr, f.report.params_pr, f.a, f.b);
  }
  return 0;
}
