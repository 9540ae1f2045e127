#include "hrank/formats.hpp"

#include <json.hpp>

#include "hrank/error.hpp"
#include "hrank/fingerprint.hpp"

namespace hrank {

using json = nlohmann::json;

namespace {

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

// Runs `f`, converting nlohmann access errors into FormatError.
template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

void expect_format(const json& j, const char* name) {
  if (!j.is_object() || !j.contains("format") || j.at("format") != name) {
    throw FormatError(std::string("format: expected \"") + name + "\"");
  }
}

json stats_body(const std::vector<RankStats>& stats) {
  json layers = json::array();
  for (const auto& s : stats) {
    layers.push_back({{"layer_id", s.layer_id},
                      {"layer_name", s.layer_name},
                      {"g", s.g_used},
                      {"height", s.height},
                      {"width", s.width},
                      {"capture", to_string(s.capture)},
                      {"tolerance_scale", s.tolerance.scale},
                      {"rank_sum", s.rank_sum}});
  }
  return layers;
}

}  // namespace

std::string stats_fingerprint(const std::vector<RankStats>& stats) {
  return sha256_hex(stats_body(stats).dump());
}

std::string rank_stats_to_json(const std::vector<RankStats>& stats,
                               const std::string& model_fingerprint, std::uint64_t seed) {
  json j;
  j["format"] = "hrank-rank-stats";
  j["model_fingerprint"] = model_fingerprint;
  j["stats_fingerprint"] = stats_fingerprint(stats);
  j["seed"] = seed;
  j["layers"] = stats_body(stats);
  return j.dump(1);
}

RankStatsFile rank_stats_from_json(const std::string& text) {
  const json j = parse(text, "rank stats");
  expect_format(j, "hrank-rank-stats");
  RankStatsFile f = guarded("rank stats", [&] {
    RankStatsFile r;
    r.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    r.stats_fingerprint = j.at("stats_fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& l : j.at("layers")) {
      RankStats s;
      s.layer_id = l.at("layer_id").get<int>();
      s.layer_name = l.at("layer_name").get<std::string>();
      s.g_used = l.at("g").get<std::size_t>();
      s.height = l.at("height").get<std::size_t>();
      s.width = l.at("width").get<std::size_t>();
      s.capture = capture_point_from_string(l.at("capture").get<std::string>());
      s.tolerance.scale = l.at("tolerance_scale").get<double>();
      s.rank_sum = l.at("rank_sum").get<std::vector<std::uint64_t>>();
      r.stats.push_back(std::move(s));
    }
    return r;
  });
  if (stats_fingerprint(f.stats) != f.stats_fingerprint) {
    throw ConsistencyError("rank statistics do not match their recorded fingerprint");
  }
  return f;
}

std::string rate_config_to_json(const PruneRateConfig& cfg) {
  json j;
  j["format"] = "hrank-rates";
  if (cfg.default_rate) j["default_rate"] = *cfg.default_rate;
  json layers = json::object();
  for (const auto& [key, r] : cfg.layers) {
    if (r.n_prune) {
      layers[key] = {{"n_prune", *r.n_prune}};
    } else {
      layers[key] = r.rate;
    }
  }
  j["layers"] = layers;
  return j.dump(1);
}

PruneRateConfig rate_config_from_json(const std::string& text) {
  const json j = parse(text, "rates");
  expect_format(j, "hrank-rates");
  return guarded("rates", [&] {
    PruneRateConfig cfg;
    if (j.contains("default_rate")) cfg.default_rate = j.at("default_rate").get<double>();
    if (j.contains("layers")) {
      for (const auto& [key, v] : j.at("layers").items()) {
        PruneRate r;
        if (v.is_object()) {
          r.n_prune = v.at("n_prune").get<std::size_t>();
        } else if (v.is_number()) {
          r.rate = v.get<double>();
          if (!(r.rate >= 0.0 && r.rate < 1.0)) {
            throw FormatError("rates: layer '" + key + "' rate outside [0, 1)");
          }
        } else {
          throw FormatError("rates: layer '" + key + "' needs a number or {\"n_prune\": k}");
        }
        cfg.layers[key] = r;
      }
    }
    if (cfg.default_rate && !(*cfg.default_rate >= 0.0 && *cfg.default_rate < 1.0)) {
      throw FormatError("rates: default_rate outside [0, 1)");
    }
    return cfg;
  });
}

std::string plan_to_json(const PruningPlan& plan) {
  json j;
  j["format"] = "hrank-plan";
  j["variant"] = to_string(plan.provenance.variant);
  j["seed"] = plan.provenance.seed;
  j["stats_fingerprint"] = plan.provenance.stats_fingerprint;
  j["model_fingerprint"] = plan.provenance.model_fingerprint;
  json layers = json::array();
  for (const auto& l : plan.layers) {
    layers.push_back({{"layer_id", l.layer_id},
                      {"layer_name", l.layer_name},
                      {"n_filters", l.n_filters},
                      {"keep", l.keep},
                      {"prune", l.prune}});
  }
  j["layers"] = layers;
  return j.dump(1);
}

PruningPlan plan_from_json(const std::string& text) {
  const json j = parse(text, "plan");
  expect_format(j, "hrank-plan");
  PruningPlan plan = guarded("plan", [&] {
    PruningPlan p;
    p.provenance.variant = variant_from_string(j.at("variant").get<std::string>());
    p.provenance.seed = j.at("seed").get<std::uint64_t>();
    p.provenance.stats_fingerprint = j.at("stats_fingerprint").get<std::string>();
    p.provenance.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    for (const auto& l : j.at("layers")) {
      p.layers.push_back({l.at("layer_id").get<int>(), l.at("layer_name").get<std::string>(),
                          l.at("n_filters").get<std::size_t>(),
                          l.at("keep").get<std::vector<std::size_t>>(),
                          l.at("prune").get<std::vector<std::size_t>>()});
    }
    return p;
  });
  try {
    plan.check_invariants();
  } catch (const ConsistencyError& e) {
    throw FormatError(std::string("plan: ") + e.what());
  }
  return plan;
}

std::string freeze_mask_to_json(const FreezeMask& mask) {
  json j;
  j["format"] = "hrank-freeze-mask";
  j["freeze_fraction"] = mask.freeze_fraction;
  json layers = json::array();
  for (const auto& l : mask.layers) {
    layers.push_back({{"layer_id", l.layer_id}, {"trainable", l.trainable}});
  }
  j["layers"] = layers;
  return j.dump(1);
}

FreezeMask freeze_mask_from_json(const std::string& text) {
  const json j = parse(text, "freeze mask");
  expect_format(j, "hrank-freeze-mask");
  return guarded("freeze mask", [&] {
    FreezeMask m;
    m.freeze_fraction = j.at("freeze_fraction").get<double>();
    for (const auto& l : j.at("layers")) {
      m.layers.push_back({l.at("layer_id").get<int>(), l.at("trainable").get<std::vector<bool>>()});
    }
    return m;
  });
}

std::string complexity_to_json(const ComplexityReport& report) {
  json j;
  j["format"] = "hrank-complexity";
  j["input"] = {report.input.c, report.input.h, report.input.w};
  j["bn_params_counted"] = report.bn_params_counted;
  j["total_flops"] = report.total_flops;
  j["total_params"] = report.total_params;
  json layers = json::array();
  for (const auto& l : report.layers) {
    layers.push_back({{"layer_id", l.layer_id},
                      {"name", l.name},
                      {"kind", to_string(l.kind)},
                      {"flops", l.flops},
                      {"params", l.params}});
  }
  j["layers"] = layers;
  return j.dump(1);
}

ComplexityReport complexity_from_json(const std::string& text) {
  const json j = parse(text, "complexity");
  expect_format(j, "hrank-complexity");
  return guarded("complexity", [&] {
    ComplexityReport r;
    const auto& in = j.at("input");
    r.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
    r.bn_params_counted = j.at("bn_params_counted").get<bool>();
    r.total_flops = j.at("total_flops").get<std::uint64_t>();
    r.total_params = j.at("total_params").get<std::uint64_t>();
    for (const auto& l : j.at("layers")) {
      r.layers.push_back({l.at("layer_id").get<int>(), l.at("name").get<std::string>(),
                          layer_kind_from_string(l.at("kind").get<std::string>()),
                          l.at("flops").get<std::uint64_t>(), l.at("params").get<std::uint64_t>()});
    }
    return r;
  });
}

}  // namespace hrank
