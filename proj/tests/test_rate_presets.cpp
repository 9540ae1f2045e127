#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "hrank/formats.hpp"
#include "hrank/model_io.hpp"
#include "hrank/planner.hpp"
#include "hrank/presets.hpp"
#include "hrank/surgeon.hpp"

using namespace hrank;
namespace fs = std::filesystem;

namespace {

// Flat statistics: every filter ties, so the plan depends on rates alone.
std::vector<RankStats> flat_stats(const NetworkGraph& net) {
  std::vector<RankStats> out;
  for (int id : net.prunable_ids()) {
    RankStats s;
    s.layer_id = id;
    s.layer_name = net.node(id).name;
    s.rank_sum.assign(net.node(id).conv().filters.n_out(), 1);
    s.g_used = 1;
    out.push_back(s);
  }
  return out;
}

std::string preset_for(const std::string& file) {
  for (const auto& name : preset_names()) {
    const std::string stem = name.substr(0, name.find('_'));
    if (file.rfind(stem + "_", 0) == 0) return name;
  }
  return "";
}

}  // namespace

TEST(RatePresets, ReproduceRecordedReductions) {
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(HRANK_RATES_DIR)) {
    const std::string file = e.path().filename().string();
    const std::string preset = preset_for(file);
    ASSERT_FALSE(preset.empty()) << file;
    ++files;
    const std::string text = read_text_file(e.path());
    const auto cfg = rate_config_from_json(text);
    const auto meta = nlohmann::json::parse(text);

    const auto net = build_preset(preset, 10, {1.0, 0, false});
    EXPECT_EQ(cfg.layers.size(), net.prunable_ids().size()) << file;
    const auto plan = build_plan(net, flat_stats(net), cfg, Variant::hrank, 0);
    const auto r = reduction_report(count_complexity(net), count_complexity(apply_plan(net, plan)));

    char achieved[96];
    std::snprintf(achieved, sizeof achieved, "FLOPs PR %.1f%%, params PR %.1f%%", r.flops_pr, r.params_pr);
    EXPECT_EQ(meta.at("achieved").get<std::string>(), achieved) << file;

    const double published = std::stod(file.substr(file.find('_') + 1));
    EXPECT_NEAR(r.flops_pr, published, 2.0) << file;
  }
  EXPECT_EQ(files, 13u);
}
