// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "gradcheck.hpp"
#include "hrank/cli.hpp"
#include "hrank/data.hpp"
#include "hrank/planner.hpp"
#include "hrank/presets.hpp"
#include "hrank/rank.hpp"
#include "hrank/surgeon.hpp"
#include "hrank/svd.hpp"
#include "hrank/trainer.hpp"
#include "oracles.hpp"

using namespace hrank;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<Outcome()> run;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// 1. FLOPs and parameters of the full-width presets against published baselines.
Outcome complexity_baselines() {
  struct Target {
    const char* preset;
    double flops;
    double params;
  };
  const Target targets[] = {{"vgg16_cifar", 313.73e6, 14.98e6},
                            {"googlenet_cifar", 1.52e9, 6.15e6},
                            {"resnet56", 125.49e6, 0.85e6},
                            {"resnet110", 252.89e6, 1.72e6},
                            {"densenet40", 282.00e6, 1.04e6}};
  Outcome o{true, ""};
  for (const auto& t : targets) {
    const auto r = count_complexity(build_preset(t.preset, 10, {1.0, 0, false}));
    const double ef = std::abs(static_cast<double>(r.total_flops) / t.flops - 1.0);
    const double ep = std::abs(static_cast<double>(r.total_params) / t.params - 1.0);
    o.pass = o.pass && ef <= 0.02 && ep <= 0.02;
    o.detail += std::string(t.preset) + " flops " + fmt(100 * ef, 2) + "% params " + fmt(100 * ep, 2) + "%; ";
  }
  return o;
}

// 2. numerical_rank against exact integer elimination.
Outcome rank_oracle() {
  std::mt19937_64 rng(2024);
  std::size_t agree = 0;
  const std::size_t total = 1000;
  for (std::size_t t = 0; t < total; ++t) {
    const auto m = oracle::planted_rank_matrix(rng, 12);
    std::vector<double> d(m.data.begin(), m.data.end());
    if (numerical_rank(d, m.rows, m.cols) == oracle::bareiss_rank(m.data, m.rows, m.cols)) ++agree;
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) + " agree"};
}

// 3. Reconstruction and orthonormality residuals of the Jacobi SVD.
Outcome svd_contract() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(1, 32);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_recon = 0.0;
  double worst_orth = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int r = dim(rng);
    const int c = dim(rng);
    Eigen::MatrixXd a(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) a(i, j) = u(rng);
    }
    if (t % 4 == 3) {
      // rank-deficient: product through a thin inner dimension
      const int k = std::uniform_int_distribution<int>(1, std::max(1, std::min(r, c) / 2))(rng);
      Eigen::MatrixXd l(r, k), rr(k, c);
      for (int i = 0; i < l.size(); ++i) l.data()[i] = u(rng);
      for (int i = 0; i < rr.size(); ++i) rr.data()[i] = u(rng);
      a = l * rr;
    }
    const auto s = svd(a);
    const Eigen::MatrixXd rec = s.u * s.singular_values.asDiagonal() * s.v.transpose();
    worst_recon = std::max(worst_recon, (a - rec).norm() / a.norm());
    const auto k = s.singular_values.size();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
    worst_orth = std::max({worst_orth, (s.u.transpose() * s.u - eye).norm(), (s.v.transpose() * s.v - eye).norm()});
  }
  return {worst_recon < 1e-9 && worst_orth < 1e-9,
          "max reconstruction " + fmt(worst_recon, 3) + ", max orthonormality " + fmt(worst_orth, 3)};
}

// 4. select_hrank reaches the exhaustive minimum of the pruned rank sum.
Outcome selection_optimality() {
  std::mt19937_64 rng(4040);
  std::size_t layers = 0;
  std::size_t optimal = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const int n_layers = std::uniform_int_distribution<int>(1, 4)(rng);
    const std::uint64_t hi = inst % 2 == 0 ? 6 : 50000;
    for (int l = 0; l < n_layers; ++l) {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
      const std::size_t k = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      std::vector<std::uint64_t> v(n);
      for (auto& x : v) x = std::uniform_int_distribution<std::uint64_t>(0, hi)(rng);
      const auto sel = select_hrank(v, k);
      std::uint64_t obj = 0;
      for (auto j : sel.prune) obj += v[j];
      ++layers;
      if (sel.prune.size() == k && sel.keep.size() + k == n && obj == oracle::brute_force_min_subset(v, k)) {
        ++optimal;
      }
    }
  }
  return {optimal == layers, std::to_string(optimal) + "/" + std::to_string(layers) + " layers optimal"};
}

// 5. Mean ranks from two disjoint 250-image samples agree per filter.
Outcome rank_stability(const std::string& cifar_dir) {
  const DatasetSource data = cifar_dir.empty()
                                 ? synthetic({10, 1000, {3, 32, 32}, 5, 3.0, 1.0, 2})
                                 : open_cifar10(cifar_dir, CifarSplit::test);
  const auto idx = sample(data, 500, 99);
  const std::vector<std::size_t> first(idx.begin(), idx.begin() + 250);
  const std::vector<std::size_t> second(idx.begin() + 250, idx.end());
  Outcome o{true, cifar_dir.empty() ? "synthetic; " : "cifar10 test; "};
  for (const auto& name : preset_names()) {
    if (name == "tiny_plain") continue;
    const auto net = build_preset(name, 10, {0.25, 1, true});
    RankEstimateOptions opts;
    const auto a = estimate_ranks_on(net, data, first, opts);
    const auto b = estimate_ranks_on(net, data, second, opts);
    std::size_t stable = 0;
    std::size_t filters = 0;
    for (std::size_t l = 0; l < a.size(); ++l) {
      const double bound = 0.05 * static_cast<double>(std::min(a[l].height, a[l].width));
      for (std::size_t j = 0; j < a[l].filters(); ++j) {
        ++filters;
        if (std::abs(a[l].mean(j) - b[l].mean(j)) <= bound) ++stable;
      }
    }
    const double frac = static_cast<double>(stable) / static_cast<double>(filters);
    o.pass = o.pass && frac >= 0.95;
    o.detail += name + " " + fmt(100 * frac, 4) + "% of " + std::to_string(filters) + "; ";
  }
  return o;
}

// 6. Removing filters whose output is already zero leaves the logits unchanged.
Outcome zero_filter_surgery() {
  std::mt19937_64 rng(606);
  Outcome o{true, ""};
  for (const std::string name : {"vgg16_cifar", "resnet56", "googlenet_cifar", "densenet40"}) {
    const auto base = build_preset(name, 10, {0.25, 3, true});
    double worst = 0.0;
    for (int batch = 0; batch < 20; ++batch) {
      auto net = base;
      std::vector<std::pair<int, std::vector<std::size_t>>> picks;
      for (int id : net.prunable_ids()) {
        if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) continue;
        const std::size_t n = net.node(id).conv().filters.n_out();
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::shuffle(all.begin(), all.end(), rng);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, std::max<std::size_t>(1, n / 2))(rng);
        std::vector<std::size_t> chosen(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(k, n - 1)));
        std::sort(chosen.begin(), chosen.end());
        if (!chosen.empty()) picks.emplace_back(id, chosen);
      }
      const auto plan = oracle::zero_filters(net, picks);
      const auto pruned = apply_plan(net, plan);
      const auto& d = net.input_dims();
      const Tensor4 x = oracle::random_tensor({2, d.c, d.h, d.w}, rng);
      const Tensor4 ya = forward(net, x).logits;
      const Tensor4 yb = forward(pruned, x).logits;
      for (std::size_t i = 0; i < ya.size(); ++i) worst = std::max(worst, std::abs(ya.data()[i] - yb.data()[i]));
    }
    o.pass = o.pass && worst < 1e-9;
    o.detail += name + " " + fmt(worst, 3) + "; ";
  }
  return o;
}

// 7. Backward kernels against central differences.
Outcome gradient_checks() {
  const auto checks = oracle::run_gradient_checks(50, 7070);
  Outcome o{!checks.empty(), ""};
  double worst = 0.0;
  for (const auto& c : checks) {
    o.pass = o.pass && c.cases >= 50 && c.worst < 1e-4;
    worst = std::max(worst, c.worst);
  }
  o.detail = std::to_string(checks.size()) + " kernels x 50 cases, worst relative error " + fmt(worst, 3);
  return o;
}

bool same_bytes(const FilterTensor& a, std::size_t ja, const FilterTensor& b, std::size_t jb) {
  const std::size_t fs = a.filter_size();
  return std::memcmp(a.weights().data() + ja * fs, b.weights().data() + jb * fs, fs * sizeof(double)) == 0 &&
         std::memcmp(&a.bias()[ja], &b.bias()[jb], sizeof(double)) == 0;
}

// 8. Frozen filters are byte-identical after fine-tuning.
Outcome freeze_identity() {
  const auto data = synthetic({10, 600, {3, 16, 16}, 8, 2.0, 1.0, 1});
  const auto net = build_tiny_plain({{3, 16, 16}, {16, 32, 32}, 10, true, 8});
  RankEstimateOptions ro;
  ro.g = 100;
  const auto stats = estimate_ranks(net, data, ro);
  PruneRateConfig rates;
  rates.default_rate = 0.5;
  const auto plan = build_plan(net, stats, rates, Variant::hrank, 0);
  const auto mask = build_freeze_mask(plan, stats, 0.5);
  const auto start = apply_plan(net, plan);
  auto trained = start;
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 0.05;
  cfg.batch_size = 32;
  cfg.seed = 8;
  TrainOptions opts;
  opts.freeze = &mask;
  train(trained, data, cfg, opts);
  std::size_t frozen = 0, frozen_equal = 0, free_changed = 0, free_total = 0;
  for (const auto& lf : mask.layers) {
    const auto& a = start.node(lf.layer_id).conv().filters;
    const auto& b = trained.node(lf.layer_id).conv().filters;
    for (std::size_t j = 0; j < lf.trainable.size(); ++j) {
      const bool eq = same_bytes(a, j, b, j);
      if (lf.trainable[j]) {
        ++free_total;
        free_changed += eq ? 0 : 1;
      } else {
        ++frozen;
        frozen_equal += eq ? 1 : 0;
      }
    }
  }
  return {frozen > 0 && frozen_equal == frozen && free_changed == free_total,
          std::to_string(frozen_equal) + "/" + std::to_string(frozen) + " frozen filters byte-equal, " +
              std::to_string(free_changed) + "/" + std::to_string(free_total) + " trainable filters moved"};
}

// 9. HRank >= Random >= Reverse after 50% pruning and identical fine-tuning.
Outcome pruning_quality() {
  const Variant variants[] = {Variant::hrank, Variant::random, Variant::reverse};
  double mean[3] = {0, 0, 0};
  const int seeds = 5;
  std::string per_seed;
  for (int s = 0; s < seeds; ++s) {
    const auto all = synthetic({10, 2500, {3, 16, 16}, 1000 + static_cast<std::uint64_t>(s), 1.5, 1.0, 2});
    std::vector<std::size_t> tr(2000), te(500);
    std::iota(tr.begin(), tr.end(), std::size_t{0});
    std::iota(te.begin(), te.end(), std::size_t{2000});
    const auto train_set = all.subset(tr);
    const auto test_set = all.subset(te);

    auto net = build_tiny_plain({{3, 16, 16}, {16, 32, 32}, 10, true, static_cast<std::uint64_t>(s)});
    TrainConfig pre;
    pre.epochs = 15;
    pre.lr = 0.05;
    pre.batch_size = 32;
    pre.seed = static_cast<std::uint64_t>(s);
    pre.lr_drop_epochs = {10};
    train(net, train_set, pre);
    const double base = evaluate(net, test_set).accuracy();

    RankEstimateOptions ro;
    ro.g = 200;
    ro.seed = static_cast<std::uint64_t>(s);
    const auto stats = estimate_ranks(net, train_set, ro);
    PruneRateConfig rates;
    rates.default_rate = 0.5;
    TrainConfig ft = pre;
    ft.epochs = 1;
    ft.lr = 0.01;
    ft.lr_drop_epochs.clear();

    per_seed += "seed " + std::to_string(s) + " base " + fmt(100 * base, 3);
    for (int v = 0; v < 3; ++v) {
      auto pruned = apply_plan(net, build_plan(net, stats, rates, variants[v], static_cast<std::uint64_t>(s)));
      train(pruned, train_set, ft);
      const double acc = evaluate(pruned, test_set).accuracy();
      mean[v] += acc / seeds;
      per_seed += std::string(" ") + to_string(variants[v]) + " " + fmt(100 * acc, 3);
    }
    per_seed += "; ";
  }
  const double h = 100 * mean[0], r = 100 * mean[1], v = 100 * mean[2];
  return {h >= r && r >= v && h - v >= 2.0,
          "mean top-1 hrank " + fmt(h) + " random " + fmt(r) + " reverse " + fmt(v) + " (" + per_seed + ")"};
}

// 10. Every manifest written by the pipeline replays to identical bytes.
Outcome replayability() {
  const fs::path old = fs::current_path();
  const fs::path dir = fs::temp_directory_path() / "hrank_acceptance_replay";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::current_path(dir);
  std::ostringstream out, err;
  auto run = [&](std::vector<std::string> args) { return run_cli(args, out, err); };
  const std::vector<std::vector<std::string>> steps = {
      {"build-preset", "--preset", "resnet56", "--width", "0.25", "--seed", "4", "--out", "m.hrm"},
      {"estimate-ranks", "--model", "m.hrm", "--synthetic", "64", "--g", "32", "--workers", "2", "--out", "st.json"},
      {"plan", "--stats", "st.json", "--model", "m.hrm", "--rate", "0.3", "--variant", "random", "--out", "plan.json"},
      {"prune", "--model", "m.hrm", "--plan", "plan.json", "--out", "p.hrm"},
      {"freeze-mask", "--plan", "plan.json", "--stats", "st.json", "--freeze-fraction", "0.5", "--out", "mask.json"},
      {"finetune", "--model", "p.hrm", "--synthetic", "64", "--epochs", "1", "--batch-size", "16", "--mask",
       "mask.json", "--out", "ft.hrm"},
      {"evaluate", "--model", "ft.hrm", "--synthetic", "64", "--out", "eval.json"},
      {"report", "--before", "m.hrm", "--after", "ft.hrm", "--out", "report.json"}};
  Outcome o{true, ""};
  for (const auto& s : steps) {
    if (run(s) != 0) {
      o.pass = false;
      o.detail += s[0] + " failed: " + err.str() + "; ";
    }
  }
  std::size_t manifests = 0, replayed = 0;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(".")) files.push_back(e.path().filename());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string name = f.string();
    if (name.size() < 14 || name.compare(name.size() - 14, 14, ".manifest.json") != 0) continue;
    ++manifests;
    if (run({"replay", name}) == 0) ++replayed;
  }
  fs::current_path(old);
  fs::remove_all(dir);
  o.pass = o.pass && manifests == steps.size() && replayed == manifests;
  o.detail += std::to_string(replayed) + "/" + std::to_string(manifests) + " manifests replayed byte-identically";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HRank acceptance criteria"};
  std::vector<int> only;
  std::string cifar_dir;
  app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--cifar-dir", cifar_dir, "CIFAR-10 directory for the rank-stability check (default: synthetic)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "complexity accounting", 1, complexity_baselines},
      {2, "rank oracle equivalence", 10, rank_oracle},
      {3, "SVD contract", 30, svd_contract},
      {4, "selection optimality", 10, selection_optimality},
      {5, "rank stability", 300, [&] { return rank_stability(cifar_dir); }},
      {6, "zero-filter surgery", 60, zero_filter_surgery},
      {7, "gradient checks", 60, gradient_checks},
      {8, "freeze bit-identity", 60, freeze_identity},
      {9, "pruning quality ordering", 600, pruning_quality},
      {10, "replayability", 60, replayability},
  };

  bool all = true;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.limit_s;
    all = all && pass;
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.name << ")  " << o.detail
              << "  [" << fmt(secs, 3) << " s, limit " << c.limit_s << " s]" << std::endl;
  }
  return all ? 0 : 1;
}
