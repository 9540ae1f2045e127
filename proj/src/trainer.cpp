#include "hrank/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hrank/error.hpp"
#include "hrank/model_io.hpp"
#include "hrank/surgeon.hpp"

namespace hrank {

using json = nlohmann::json;

namespace {

constexpr std::string_view kOptMagic = "HRANKOPT";

struct Loss {
  double total = 0.0;  // summed over the batch
  std::size_t correct = 0;
  Tensor4 dlogits;     // gradient of the batch-mean loss
};

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return best;
}

Loss softmax_cross_entropy(const Tensor4& logits, std::span<const int> labels, bool want_grad) {
  const std::size_t n = logits.shape().n;
  const std::size_t k = logits.shape().image();
  Loss r;
  if (want_grad) r.dlogits = Tensor4(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.image(i);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const auto y = static_cast<std::size_t>(labels[i]);
    r.total += std::log(z) - (row[y] - m);
    if (argmax(row) == y) ++r.correct;
    if (want_grad) {
      for (std::size_t c = 0; c < k; ++c) {
        const double p = std::exp(row[c] - m) / z;
        r.dlogits.data()[i * k + c] = (p - (c == y ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
  }
  return r;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  return rng();
}

// Frozen rows per node: conv weight rows and bias entries, and the channels
// of the batchnorm directly after a conv with frozen filters.
std::vector<std::vector<bool>> frozen_channels(const NetworkGraph& net, const FreezeMask* mask) {
  std::vector<std::vector<bool>> out(net.nodes().size());
  if (mask == nullptr) return out;
  const auto cons = net.consumers();
  for (const auto& lf : mask->layers) {
    const LayerNode& n = net.node(lf.layer_id);
    if (n.kind != LayerKind::conv || n.conv().filters.n_out() != lf.trainable.size()) {
      throw ConsistencyError("freeze mask for layer " + std::to_string(lf.layer_id) +
                             " does not match the network");
    }
    std::vector<bool> frozen(lf.trainable.size());
    for (std::size_t j = 0; j < frozen.size(); ++j) frozen[j] = !lf.trainable[j];
    const auto& c = cons[static_cast<std::size_t>(lf.layer_id)];
    if (c.size() == 1 && net.node(c.front()).kind == LayerKind::batchnorm) {
      out[static_cast<std::size_t>(c.front())] = frozen;
    }
    out[static_cast<std::size_t>(lf.layer_id)] = std::move(frozen);
  }
  return out;
}

void sgd_step(std::span<double> p, const std::vector<double>& g, std::vector<double>& v,
              const std::vector<bool>& frozen, std::size_t row, const TrainConfig& cfg, double lr) {
  if (g.empty()) return;
  if (v.size() != p.size()) v.assign(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!frozen.empty() && frozen[i / row]) continue;
    const double d = g[i] + cfg.weight_decay * p[i];
    v[i] = cfg.momentum * v[i] + d;
    p[i] -= lr * v[i];
  }
}

void apply_update(NetworkGraph& net, const GraphGrads& grads, OptimizerState& st,
                  const std::vector<std::vector<bool>>& frozen, const TrainConfig& cfg, double lr) {
  st.velocity.resize(net.nodes().size());
  for (std::size_t id = 0; id < net.nodes().size(); ++id) {
    LayerNode& n = net.node(static_cast<int>(id));
    const NodeGrads& g = grads.nodes[id];
    NodeGrads& v = st.velocity[id];
    const auto& fz = frozen[id];
    switch (n.kind) {
      case LayerKind::conv: {
        FilterTensor& f = n.conv().filters;
        sgd_step(f.weights(), g.weights, v.weights, fz, f.filter_size(), cfg, lr);
        sgd_step(f.bias(), g.bias, v.bias, fz, 1, cfg, lr);
        break;
      }
      case LayerKind::batchnorm:
        sgd_step(n.bn().scale, g.scale, v.scale, fz, 1, cfg, lr);
        sgd_step(n.bn().shift, g.shift, v.shift, fz, 1, cfg, lr);
        break;
      case LayerKind::dense:
        sgd_step(n.dense().weights, g.weights, v.weights, {}, 1, cfg, lr);
        sgd_step(n.dense().bias, g.bias, v.bias, {}, 1, cfg, lr);
        break;
      default: break;
    }
  }
}

void check_velocity(const NetworkGraph& net, const OptimizerState& st) {
  if (st.velocity.empty()) return;
  if (st.velocity.size() != net.nodes().size()) {
    throw ConsistencyError("optimizer state covers " + std::to_string(st.velocity.size()) +
                           " nodes, network has " + std::to_string(net.nodes().size()));
  }
  for (const auto& n : net.nodes()) {
    const NodeGrads& v = st.velocity[static_cast<std::size_t>(n.id)];
    std::size_t expect = 0;
    if (n.kind == LayerKind::conv) expect = n.conv().filters.weights().size();
    if (n.kind == LayerKind::dense) expect = n.dense().weights.size();
    if (!v.weights.empty() && v.weights.size() != expect) {
      throw ConsistencyError("optimizer state does not match layer " + std::to_string(n.id));
    }
  }
}

}  // namespace

double TrainConfig::lr_at(std::size_t epoch) const {
  double r = lr;
  for (auto e : lr_drop_epochs) {
    if (epoch >= e) r *= lr_drop_factor;
  }
  return r;
}

EvalResult evaluate(const NetworkGraph& net, const DatasetSource& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  if (batch_size == 0) throw UsageError("batch size must be at least 1");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  EvalResult r;
  for (const auto& b : make_batches(idx, batch_size)) {
    const ForwardResult fr = forward(net, data.batch(b));
    const auto labels = data.labels(b);
    const Loss l = softmax_cross_entropy(fr.logits, labels, false);
    r.n += b.size();
    r.correct += l.correct;
    r.loss += l.total;
  }
  r.loss /= static_cast<double>(r.n);
  return r;
}

std::vector<EpochRecord> train(NetworkGraph& net, const DatasetSource& data, const TrainConfig& cfg,
                               const TrainOptions& opts) {
  if (data.size() == 0) throw DataError("cannot train on an empty dataset");
  if (cfg.batch_size == 0) throw UsageError("batch size must be at least 1");
  if (!(cfg.lr > 0.0) || cfg.momentum < 0.0 || cfg.weight_decay < 0.0) {
    throw ConfigError("learning rate must be positive, momentum and weight decay non-negative");
  }
  OptimizerState local;
  OptimizerState& st = opts.state ? *opts.state : local;
  check_velocity(net, st);
  const auto frozen = frozen_channels(net, opts.freeze);

  std::vector<EpochRecord> out;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const std::size_t epoch = st.epochs_done;
    const double lr = cfg.lr_at(epoch);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(epoch_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss = 0.0;
    std::size_t correct = 0;
    for (const auto& b : make_batches(order, cfg.batch_size)) {
      const ForwardTape tape = forward_train(net, data.batch(b));
      const auto labels = data.labels(b);
      const Loss l = softmax_cross_entropy(tape.logits(), labels, true);
      if (!std::isfinite(l.total)) {
        throw DivergedError("training loss became non-finite in epoch " + std::to_string(epoch) +
                            " at step " + std::to_string(st.steps));
      }
      loss += l.total;
      correct += l.correct;
      const GraphGrads grads = backward(net, tape, l.dlogits);
      apply_update(net, grads, st, frozen, cfg, lr);
      ++st.steps;
    }
    EpochRecord rec;
    rec.stage = opts.stage;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss / static_cast<double>(data.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    if (opts.eval) rec.eval_accuracy = evaluate(net, *opts.eval).accuracy();
    out.push_back(rec);
    ++st.epochs_done;
  }
  return out;
}

void save_optimizer_state(const OptimizerState& state, const std::filesystem::path& path) {
  json header;
  header["format"] = "hrank-optimizer";
  header["epochs_done"] = state.epochs_done;
  header["steps"] = state.steps;
  json slots = json::array();
  std::vector<double> payload;
  for (std::size_t id = 0; id < state.velocity.size(); ++id) {
    const NodeGrads& v = state.velocity[id];
    for (const auto& [name, vec] : {std::pair{"weights", &v.weights}, std::pair{"bias", &v.bias},
                                    std::pair{"scale", &v.scale}, std::pair{"shift", &v.shift}}) {
      if (vec->empty()) continue;
      slots.push_back({{"node", id}, {"field", name}, {"count", vec->size()}});
      payload.insert(payload.end(), vec->begin(), vec->end());
    }
  }
  header["nodes"] = state.velocity.size();
  header["slots"] = slots;
  write_file_bytes(path, frame_blob(kOptMagic, header.dump(), payload));
}

OptimizerState load_optimizer_state(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const UnframedBlob blob = unframe_blob(bytes, kOptMagic);
  if (!blob.checksum_ok) throw FormatError("checksum: optimizer state is corrupted");
  OptimizerState st;
  try {
    const json header = json::parse(blob.header);
    if (header.at("format") != "hrank-optimizer") throw FormatError("header: not an optimizer state file");
    st.epochs_done = header.at("epochs_done").get<std::size_t>();
    st.steps = header.at("steps").get<std::size_t>();
    st.velocity.resize(header.at("nodes").get<std::size_t>());
    const std::size_t available = blob.payload.size() / sizeof(double);
    std::size_t offset = 0;
    for (const auto& s : header.at("slots")) {
      const auto id = s.at("node").get<std::size_t>();
      const auto count = s.at("count").get<std::size_t>();
      const auto field = s.at("field").get<std::string>();
      if (id >= st.velocity.size()) throw FormatError("header: slot names node " + std::to_string(id));
      if (offset + count > available) throw FormatError("payload: too short for declared slots");
      NodeGrads& v = st.velocity[id];
      std::vector<double>* dst = field == "weights" ? &v.weights
                                 : field == "bias"  ? &v.bias
                                 : field == "scale" ? &v.scale
                                 : field == "shift" ? &v.shift
                                                    : nullptr;
      if (dst == nullptr) throw FormatError("header: unknown slot field '" + field + "'");
      dst->resize(count);
      read_doubles(blob.payload, offset, *dst);
      offset += count;
    }
    if (offset != available || blob.payload.size() % sizeof(double) != 0) {
      throw FormatError("payload: size does not match declared slots");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("header: ") + e.what());
  }
  return st;
}

const char* to_string(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::per_layer: return "per_layer";
    case ScheduleMode::per_block: return "per_block";
    case ScheduleMode::one_shot: return "one_shot";
  }
  return "?";
}

ScheduleMode schedule_mode_from_string(const std::string& s) {
  if (s == "per_layer") return ScheduleMode::per_layer;
  if (s == "per_block") return ScheduleMode::per_block;
  if (s == "one_shot") return ScheduleMode::one_shot;
  throw UsageError("schedule must be per_layer, per_block or one_shot, got '" + s + "'");
}

ScheduleResult prune_finetune_schedule(const NetworkGraph& net, const PruningPlan& plan,
                                       const FreezeMask* freeze, const DatasetSource& data,
                                       const TrainConfig& cfg, ScheduleMode mode,
                                       const DatasetSource* eval) {
  plan.check_invariants();
  struct Stage {
    std::string label;
    std::vector<int> layers;
  };
  std::vector<Stage> stages;
  for (const auto& l : plan.layers) {
    const LayerNode& n = net.node(l.layer_id);
    std::string label;
    switch (mode) {
      case ScheduleMode::per_layer: label = n.name; break;
      case ScheduleMode::per_block:
        label = n.block >= 0 ? net.blocks()[static_cast<std::size_t>(n.block)].name : n.name;
        break;
      case ScheduleMode::one_shot: label = "all"; break;
    }
    if (stages.empty() || stages.back().label != label || mode == ScheduleMode::per_layer) {
      stages.push_back({label, {}});
    }
    stages.back().layers.push_back(l.layer_id);
  }
  if (!plan.provenance.model_fingerprint.empty() &&
      plan.provenance.model_fingerprint != model_fingerprint(net)) {
    throw ConsistencyError("plan was made for a different model");
  }

  ScheduleResult r{net, {}};
  std::vector<int> done;
  for (const auto& stage : stages) {
    PruningPlan step = plan.restricted_to(stage.layers);
    step.provenance.model_fingerprint.clear();
    r.net = apply_plan(r.net, step);
    done.insert(done.end(), stage.layers.begin(), stage.layers.end());
    if (cfg.epochs == 0) continue;

    FreezeMask active;
    if (freeze) {
      active.freeze_fraction = freeze->freeze_fraction;
      for (const auto& lf : freeze->layers) {
        if (std::find(done.begin(), done.end(), lf.layer_id) != done.end()) active.layers.push_back(lf);
      }
    }
    TrainOptions to;
    to.freeze = freeze ? &active : nullptr;
    to.eval = eval;
    to.stage = "prune:" + stage.label;
    auto recs = train(r.net, data, cfg, to);
    r.trajectory.insert(r.trajectory.end(), recs.begin(), recs.end());
  }
  return r;
}

std::string trajectory_table(const std::vector<EpochRecord>& records) {
  std::ostringstream os;
  os << "stage\tepoch\tlr\tloss\ttrain_acc\teval_acc\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "\t%zu\t%.6g\t%.6f\t%.4f\t", r.epoch, r.lr, r.loss,
                  r.train_accuracy);
    os << r.stage << buf;
    if (r.eval_accuracy >= 0.0) {
      std::snprintf(buf, sizeof(buf), "%.4f", r.eval_accuracy);
      os << buf;
    } else {
      os << "-";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace hrank
