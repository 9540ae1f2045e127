#include "hrank/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "hrank/error.hpp"
#include "hrank/fingerprint.hpp"
#include "hrank/formats.hpp"
#include "hrank/model_io.hpp"
#include "hrank/planner.hpp"
#include "hrank/presets.hpp"
#include "hrank/rank.hpp"
#include "hrank/surgeon.hpp"
#include "hrank/trainer.hpp"

namespace hrank {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ModelArgs {
  std::string model;
  std::string preset;
  double width = 1.0;
  std::size_t classes = 10;
  std::uint64_t init_seed = 0;
};

struct DataArgs {
  std::string dataset_dir;
  std::string split = "train";
  std::size_t synthetic = 0;
  std::uint64_t data_seed = 0;
  double margin = 3.0;
  double noise = 1.0;
  std::size_t jitter = 0;
};

// Everything a command read and wrote, for the manifest.
struct RunLog {
  json params = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--model", m.model, "model file");
  cmd->add_option("--preset", m.preset, "preset architecture instead of a model file");
  cmd->add_option("--width", m.width, "preset channel multiplier");
  cmd->add_option("--classes", m.classes, "preset class count");
  cmd->add_option("--init-seed", m.init_seed, "preset weight initialization seed");
}

void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--dataset-dir", d.dataset_dir, "CIFAR-10 binary directory");
  cmd->add_option("--split", d.split, "CIFAR-10 split: train or test");
  cmd->add_option("--synthetic", d.synthetic, "use N synthetic images instead of CIFAR-10");
  cmd->add_option("--data-seed", d.data_seed, "synthetic generator seed");
  cmd->add_option("--margin", d.margin, "synthetic blob amplitude");
  cmd->add_option("--noise", d.noise, "synthetic pixel noise");
  cmd->add_option("--jitter", d.jitter, "synthetic blob displacement");
}

NetworkGraph load_net(const ModelArgs& m, RunLog& log) {
  if (m.model.empty() == m.preset.empty()) throw UsageError("give exactly one of --model or --preset");
  if (!m.model.empty()) {
    log.inputs.push_back(m.model);
    return load_model(m.model);
  }
  log.params["preset"] = m.preset;
  log.params["width"] = m.width;
  log.params["classes"] = m.classes;
  log.params["init_seed"] = m.init_seed;
  return build_preset(m.preset, m.classes, {m.width, m.init_seed, true});
}

DatasetSource open_data(const DataArgs& d, const NetworkGraph& net, RunLog& log) {
  const bool cifar = !d.dataset_dir.empty();
  if (cifar == (d.synthetic > 0)) throw UsageError("give exactly one of --dataset-dir or --synthetic");
  if (cifar) {
    CifarSplit split;
    if (d.split == "train") {
      split = CifarSplit::train;
    } else if (d.split == "test") {
      split = CifarSplit::test;
    } else {
      throw UsageError("--split must be train or test");
    }
    log.params["dataset"] = {{"kind", "cifar10"}, {"dir", d.dataset_dir}, {"split", d.split}};
    return open_cifar10(d.dataset_dir, split);
  }
  SyntheticOptions so;
  so.num_classes = net.num_classes();
  so.n = d.synthetic;
  so.dims = net.input_dims();
  so.seed = d.data_seed;
  so.margin = d.margin;
  so.noise = d.noise;
  so.jitter = d.jitter;
  log.params["dataset"] = {{"kind", "synthetic"}, {"n", d.synthetic}, {"seed", d.data_seed},
                           {"margin", d.margin}, {"noise", d.noise}, {"jitter", d.jitter}};
  return synthetic(so);
}

void write_output(const std::string& path, const std::string& text, RunLog& log) {
  write_text_file(path, text);
  log.outputs.push_back(path);
}

std::string file_digest(const std::string& path) {
  return sha256_hex(std::span<const std::uint8_t>(read_file_bytes(path)));
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string manifest_path(const std::string& out) { return out + ".manifest.json"; }

void write_manifest(const std::string& command, const std::vector<std::string>& args,
                    const std::string& out, const RunLog& log, const std::string& started) {
  json m;
  m["format"] = "hrank-manifest";
  m["tool_version"] = kToolVersion;
  m["command"] = command;
  m["args"] = args;
  m["cwd"] = fs::current_path().string();
  m["parameters"] = log.params;
  json inputs = json::array();
  for (const auto& p : log.inputs) inputs.push_back({{"path", p}, {"sha256", file_digest(p)}});
  json outputs = json::array();
  for (const auto& p : log.outputs) outputs.push_back({{"path", p}, {"sha256", file_digest(p)}});
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["started"] = started;
  m["finished"] = utc_now();
  write_text_file(manifest_path(out), m.dump(1) + "\n");
}

std::string human_count(std::uint64_t v) {
  char buf[32];
  if (v >= 1000000000ULL) {
    std::snprintf(buf, sizeof(buf), "%.2fB", static_cast<double>(v) / 1e9);
  } else if (v >= 100000ULL) {
    std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(v) / 1e6);
  } else {
    std::snprintf(buf, sizeof(buf), "%.2fK", static_cast<double>(v) / 1e3);
  }
  return buf;
}

std::string with_pr(std::uint64_t v, double pr) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s(%.1f%%)", human_count(v).c_str(), pr);
  return buf;
}

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::usage || e.kind() == ErrorKind::config ? 2 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HRank filter pruning toolkit", "hrank"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string out_path;
  std::uint64_t seed = 0;
  ModelArgs model;
  DataArgs data;

  // build-preset
  auto* c_build = app.add_subcommand("build-preset", "write a preset architecture as a model file");
  c_build->alias("init");
  c_build->add_option("--preset", model.preset, "preset name")->required();
  c_build->add_option("--width", model.width, "channel multiplier");
  c_build->add_option("--classes", model.classes, "class count");
  c_build->add_option("--seed", model.init_seed, "weight initialization seed");
  c_build->add_option("--out", out_path, "model file")->required();

  // estimate-ranks
  std::size_t g = 500;
  std::size_t batch = 50;
  std::string capture = "post_block";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  double tol_scale = 1.0;
  auto* c_est = app.add_subcommand("estimate-ranks", "accumulate feature-map ranks over g images");
  add_model_options(c_est, model);
  add_data_options(c_est, data);
  c_est->add_option("--g", g, "number of sampled images");
  c_est->add_option("--batch-size", batch, "forward batch size");
  c_est->add_option("--seed", seed, "sampling seed");
  c_est->add_option("--capture-point", capture, "post_block or post_conv");
  c_est->add_option("--workers", workers, "rank worker threads");
  c_est->add_option("--tolerance-scale", tol_scale, "multiplier on the rank tolerance");
  c_est->add_option("--out", out_path, "rank statistics file")->required();

  // rank-report
  std::string stats_path;
  bool table = false;
  auto* c_rep_rank = app.add_subcommand("rank-report", "summarize rank statistics");
  c_rep_rank->add_option("--stats", stats_path, "rank statistics file")->required();
  c_rep_rank->add_flag("--table", table, "one tab-separated row per filter");
  c_rep_rank->add_option("--out", out_path, "write the report here instead of stdout");

  // plan
  std::string rates_path;
  std::string variant = "hrank";
  double default_rate = -1.0;
  auto* c_plan = app.add_subcommand("plan", "select filters to prune");
  c_plan->add_option("--stats", stats_path, "rank statistics file")->required();
  c_plan->add_option("--model", model.model, "model the statistics were taken from");
  c_plan->add_option("--rates", rates_path, "pruning rate file");
  c_plan->add_option("--rate", default_rate, "uniform rate for every layer in the statistics");
  c_plan->add_option("--variant", variant, "hrank, edge, random or reverse");
  c_plan->add_option("--seed", seed, "seed for the random variant");
  c_plan->add_option("--out", out_path, "plan file")->required();

  // freeze-mask
  std::string plan_path;
  double freeze_fraction = 0.0;
  auto* c_mask = app.add_subcommand("freeze-mask", "choose kept filters to hold fixed during fine-tuning");
  c_mask->add_option("--plan", plan_path, "plan file")->required();
  c_mask->add_option("--stats", stats_path, "rank statistics file")->required();
  c_mask->add_option("--freeze-fraction", freeze_fraction, "fraction of kept filters to freeze")->required();
  c_mask->add_option("--out", out_path, "mask file")->required();

  // prune
  auto* c_prune = app.add_subcommand("prune", "apply a plan to a model");
  c_prune->add_option("--model", model.model, "model file")->required();
  c_prune->add_option("--plan", plan_path, "plan file")->required();
  c_prune->add_option("--out", out_path, "pruned model file")->required();

  // report
  std::string before_path;
  std::string after_path;
  std::string label = "model";
  bool no_bn = false;
  auto* c_report = app.add_subcommand("report", "FLOPs and parameter reduction between two models");
  c_report->add_option("--before", before_path, "reference model")->required();
  c_report->add_option("--after", after_path, "pruned model")->required();
  c_report->add_option("--name", label, "row label");
  c_report->add_flag("--exclude-bn", no_bn, "leave batchnorm affine parameters out of the count");
  c_report->add_option("--out", out_path, "write the complexity of --after as JSON");
  add_data_options(c_report, data);

  // evaluate
  auto* c_eval = app.add_subcommand("evaluate", "top-1 accuracy of a model");
  add_model_options(c_eval, model);
  add_data_options(c_eval, data);
  c_eval->add_option("--out", out_path, "write the result as JSON");

  // finetune
  TrainConfig tc;
  std::string mask_path;
  std::string resume_path;
  std::string schedule;
  double ff_opt = -1.0;
  auto* c_ft = app.add_subcommand("finetune", "SGD fine-tuning with optional frozen filters");
  add_model_options(c_ft, model);
  add_data_options(c_ft, data);
  c_ft->add_option("--epochs", tc.epochs, "training epochs");
  c_ft->add_option("--lr", tc.lr, "initial learning rate");
  c_ft->add_option("--momentum", tc.momentum, "momentum");
  c_ft->add_option("--weight-decay", tc.weight_decay, "L2 weight decay");
  c_ft->add_option("--batch-size", tc.batch_size, "minibatch size");
  c_ft->add_option("--lr-drop", tc.lr_drop_epochs, "epochs at which the learning rate drops 10x");
  c_ft->add_option("--seed", seed, "shuffle seed");
  c_ft->add_option("--mask", mask_path, "freeze mask file");
  c_ft->add_option("--plan", plan_path, "plan for building a mask or running a schedule");
  c_ft->add_option("--stats", stats_path, "rank statistics for building a mask");
  c_ft->add_option("--freeze-fraction", ff_opt, "fraction of kept filters to freeze");
  c_ft->add_option("--schedule", schedule, "prune with --plan in stages: per_layer, per_block, one_shot");
  c_ft->add_option("--resume", resume_path, "optimizer state to continue from");
  c_ft->add_option("--out", out_path, "output model file")->required();

  // replay
  std::string manifest;
  auto* c_replay = app.add_subcommand("replay", "re-run a command from its manifest and compare outputs");
  c_replay->add_option("manifest", manifest, "manifest file")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "hrank: usage error: " << e.what() << "\n";
    return 2;
  }

  const std::string started = utc_now();
  RunLog log;
  std::string command;
  try {
    if (c_build->parsed()) {
      command = "build-preset";
      const NetworkGraph net = load_net(model, log);
      save_model(net, out_path);
      log.outputs.push_back(out_path);
      out << "wrote " << out_path << " (" << model_fingerprint(net).substr(0, 12) << ")\n";
    } else if (c_est->parsed()) {
      command = "estimate-ranks";
      if (g == 0) throw UsageError("--g must be at least 1");
      const NetworkGraph net = load_net(model, log);
      const DatasetSource ds = open_data(data, net, log);
      RankEstimateOptions o;
      o.g = g;
      o.batch_size = batch;
      o.capture = capture_point_from_string(capture);
      o.seed = seed;
      o.tolerance.scale = tol_scale;
      o.workers = workers;
      log.params["g"] = g;
      log.params["seed"] = seed;
      log.params["capture_point"] = capture;
      log.params["tolerance"] = o.tolerance.describe();
      log.params["normalization"] = {{"mean", kCifarMean}, {"std", kCifarStd}};
      const auto stats = estimate_ranks(net, ds, o);
      write_output(out_path, rank_stats_to_json(stats, model_fingerprint(net), seed) + "\n", log);
      out << "estimated ranks for " << stats.size() << " layers over " << g << " images\n";
    } else if (c_rep_rank->parsed()) {
      command = "rank-report";
      log.inputs.push_back(stats_path);
      const RankStatsFile f = rank_stats_from_json(read_text_file(stats_path));
      const std::string text = table ? rank_report_table(f.stats) : rank_report_text(f.stats);
      if (out_path.empty()) {
        out << text;
      } else {
        write_output(out_path, text, log);
      }
    } else if (c_plan->parsed()) {
      command = "plan";
      log.inputs.push_back(stats_path);
      const RankStatsFile f = rank_stats_from_json(read_text_file(stats_path));
      PruneRateConfig rates;
      if (!rates_path.empty()) {
        log.inputs.push_back(rates_path);
        rates = rate_config_from_json(read_text_file(rates_path));
      }
      if (default_rate >= 0.0) rates.default_rate = default_rate;
      if (rates_path.empty() && default_rate < 0.0) throw UsageError("give --rates or --rate");
      NetworkGraph net;
      if (!model.model.empty()) {
        log.inputs.push_back(model.model);
        net = load_model(model.model);
        if (model_fingerprint(net) != f.model_fingerprint) {
          throw ConsistencyError("rank statistics were not taken from " + model.model);
        }
      } else if (!f.stats.empty()) {
        throw UsageError("--model is required to check layer prunability");
      }
      const Variant v = variant_from_string(variant);
      log.params["variant"] = variant;
      log.params["seed"] = seed;
      PruningPlan plan = build_plan(net, f.stats, rates, v, seed);
      plan.provenance.model_fingerprint = f.model_fingerprint;
      write_output(out_path, plan_to_json(plan) + "\n", log);
      std::size_t pruned = 0;
      for (const auto& l : plan.layers) pruned += l.n_prune();
      out << "planned " << plan.layers.size() << " layers, " << pruned << " filters pruned\n";
    } else if (c_mask->parsed()) {
      command = "freeze-mask";
      log.inputs = {plan_path, stats_path};
      const PruningPlan plan = plan_from_json(read_text_file(plan_path));
      const RankStatsFile f = rank_stats_from_json(read_text_file(stats_path));
      const FreezeMask mask = build_freeze_mask(plan, f.stats, freeze_fraction);
      log.params["freeze_fraction"] = freeze_fraction;
      write_output(out_path, freeze_mask_to_json(mask) + "\n", log);
      out << "froze " << mask.frozen_count() << " filters\n";
    } else if (c_prune->parsed()) {
      command = "prune";
      const NetworkGraph net = load_net(model, log);
      log.inputs.push_back(plan_path);
      const PruningPlan plan = plan_from_json(read_text_file(plan_path));
      if (plan.provenance.model_fingerprint != model_fingerprint(net)) {
        throw ConsistencyError("plan was derived from statistics of a different model (" +
                               plan.provenance.model_fingerprint.substr(0, 12) + ")");
      }
      const NetworkGraph pruned = apply_plan(net, plan);
      save_model(pruned, out_path);
      log.outputs.push_back(out_path);
      const auto r = reduction_report(count_complexity(net), count_complexity(pruned));
      out << r.str();
    } else if (c_report->parsed()) {
      command = "report";
      log.inputs = {before_path, after_path};
      const ComplexityOptions co{!no_bn};
      const NetworkGraph a = load_model(before_path);
      const NetworkGraph b = load_model(after_path);
      const auto ca = count_complexity(a, co);
      const auto cb = count_complexity(b, co);
      const auto r = reduction_report(ca, cb);
      // Top-1 accuracy joins the row when evaluation data is given.
      const bool with_acc = !data.dataset_dir.empty() || data.synthetic > 0;
      std::string acc_a, acc_b;
      if (with_acc) {
        const DatasetSource ds = open_data(data, a, log);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f\t", 100.0 * evaluate(a, ds).accuracy());
        acc_a = buf;
        std::snprintf(buf, sizeof(buf), "%.2f\t", 100.0 * evaluate(b, ds).accuracy());
        acc_b = buf;
      }
      out << "model\t" << (with_acc ? "Top-1%\t" : "") << "FLOPs(PR)\tParameters(PR)\n";
      out << "baseline\t" << acc_a << with_pr(r.flops_before, 0.0) << '\t' << with_pr(r.params_before, 0.0)
          << '\n';
      out << label << '\t' << acc_b << with_pr(r.flops_after, r.flops_pr) << '\t'
          << with_pr(r.params_after, r.params_pr) << '\n';
      if (!out_path.empty()) write_output(out_path, complexity_to_json(cb) + "\n", log);
    } else if (c_eval->parsed()) {
      command = "evaluate";
      const NetworkGraph net = load_net(model, log);
      const DatasetSource ds = open_data(data, net, log);
      const EvalResult r = evaluate(net, ds);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "top-1 %.2f%% (%zu/%zu) loss %.4f\n", 100.0 * r.accuracy(),
                    r.correct, r.n, r.loss);
      out << buf;
      if (!out_path.empty()) {
        json j{{"format", "hrank-evaluation"}, {"n", r.n}, {"correct", r.correct},
               {"accuracy", r.accuracy()}, {"loss", r.loss}};
        write_output(out_path, j.dump(1) + "\n", log);
      }
    } else if (c_ft->parsed()) {
      command = "finetune";
      NetworkGraph net = load_net(model, log);
      const DatasetSource ds = open_data(data, net, log);
      tc.seed = seed;
      log.params["seed"] = seed;
      log.params["train"] = {{"lr", tc.lr}, {"momentum", tc.momentum},
                             {"weight_decay", tc.weight_decay}, {"batch_size", tc.batch_size},
                             {"epochs", tc.epochs}, {"lr_drop", tc.lr_drop_epochs}};
      std::optional<FreezeMask> mask;
      if (!mask_path.empty()) {
        log.inputs.push_back(mask_path);
        mask = freeze_mask_from_json(read_text_file(mask_path));
      } else if (ff_opt >= 0.0) {
        if (plan_path.empty() || stats_path.empty()) {
          throw UsageError("--freeze-fraction needs --plan and --stats (or use --mask)");
        }
        log.inputs.push_back(stats_path);
        const RankStatsFile f = rank_stats_from_json(read_text_file(stats_path));
        mask = build_freeze_mask(plan_from_json(read_text_file(plan_path)), f.stats, ff_opt);
        log.params["freeze_fraction"] = ff_opt;
      }
      if (!plan_path.empty()) log.inputs.push_back(plan_path);

      std::vector<EpochRecord> traj;
      if (!schedule.empty()) {
        if (plan_path.empty()) throw UsageError("--schedule needs --plan");
        if (!resume_path.empty()) throw UsageError("--resume cannot be combined with --schedule");
        const PruningPlan plan = plan_from_json(read_text_file(plan_path));
        log.params["schedule"] = schedule;
        auto r = prune_finetune_schedule(net, plan, mask ? &*mask : nullptr, ds, tc,
                                         schedule_mode_from_string(schedule));
        net = std::move(r.net);
        traj = std::move(r.trajectory);
        save_model(net, out_path);
        log.outputs.push_back(out_path);
      } else {
        OptimizerState st;
        if (!resume_path.empty()) {
          log.inputs.push_back(resume_path);
          st = load_optimizer_state(resume_path);
        }
        TrainOptions to;
        to.freeze = mask ? &*mask : nullptr;
        to.state = &st;
        traj = train(net, ds, tc, to);
        save_model(net, out_path);
        log.outputs.push_back(out_path);
        save_optimizer_state(st, out_path + ".opt");
        log.outputs.push_back(out_path + ".opt");
      }
      write_output(out_path + ".trajectory.tsv", trajectory_table(traj), log);
      out << trajectory_table(traj);
    } else if (c_replay->parsed()) {
      const json m = [&] {
        try {
          return json::parse(read_text_file(manifest));
        } catch (const json::exception& e) {
          throw FormatError(std::string("manifest: ") + e.what());
        }
      }();
      if (!m.is_object() || m.value("format", "") != "hrank-manifest") {
        throw FormatError("manifest: not an hrank manifest");
      }
      const auto rec_args = m.at("args").get<std::vector<std::string>>();
      const fs::path cwd = fs::current_path();
      fs::current_path(m.at("cwd").get<std::string>());
      int rc = 0;
      try {
        rc = run_cli(rec_args, out, err);
      } catch (...) {
        fs::current_path(cwd);
        throw;
      }
      if (rc != 0) {
        fs::current_path(cwd);
        return rc;
      }
      std::size_t mismatched = 0;
      for (const auto& o : m.at("outputs")) {
        const std::string path = o.at("path").get<std::string>();
        if (file_digest(path) != o.at("sha256").get<std::string>()) {
          err << "hrank: replay produced different bytes for " << path << "\n";
          ++mismatched;
        }
      }
      fs::current_path(cwd);
      if (mismatched > 0) return 1;
      out << "replay reproduced " << m.at("outputs").size() << " outputs\n";
      return 0;
    }
    if (!out_path.empty() && !log.outputs.empty()) write_manifest(command, args, out_path, log, started);
  } catch (const Error& e) {
    err << "hrank: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "hrank: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace hrank
