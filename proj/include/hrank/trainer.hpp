#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hrank/data.hpp"
#include "hrank/graph.hpp"
#include "hrank/planner.hpp"

namespace hrank {

/// SGD with momentum and L2 weight decay. The learning rate is multiplied by
/// lr_drop_factor at every epoch listed in lr_drop_epochs (0-based).
struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 1;
  std::vector<std::size_t> lr_drop_epochs;
  double lr_drop_factor = 0.1;
  std::uint64_t seed = 0;

  double lr_at(std::size_t epoch) const;
};

/// Momentum buffers, indexed by node id, plus progress counters.
struct OptimizerState {
  std::size_t epochs_done = 0;
  std::size_t steps = 0;
  std::vector<NodeGrads> velocity;

  bool empty() const { return velocity.empty(); }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

void save_optimizer_state(const OptimizerState& state, const std::filesystem::path& path);
OptimizerState load_optimizer_state(const std::filesystem::path& path);

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;            // mean training loss over the epoch
  double train_accuracy = 0.0;
  double eval_accuracy = -1.0;  // -1 when no evaluation set was given
};

struct EvalResult {
  std::size_t n = 0;
  std::size_t correct = 0;
  double loss = 0.0;
  double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n); }
};

/// Top-1 accuracy and mean cross-entropy. Ties in the logits resolve to the
/// lowest class index. Throws DataError on an empty dataset.
EvalResult evaluate(const NetworkGraph& net, const DatasetSource& data, std::size_t batch_size = 256);

struct TrainOptions {
  const FreezeMask* freeze = nullptr;    // frozen filters keep their values exactly
  const DatasetSource* eval = nullptr;   // evaluated after each epoch when set
  OptimizerState* state = nullptr;       // resumed and updated when set
  std::string stage = "train";
};

/// Runs cfg.epochs epochs of minibatch training in place. Each epoch uses a
/// shuffle derived from (cfg.seed, epoch number). Throws DivergedError when
/// the loss becomes non-finite.
std::vector<EpochRecord> train(NetworkGraph& net, const DatasetSource& data,
                               const TrainConfig& cfg, const TrainOptions& opts = {});

enum class ScheduleMode { per_layer, per_block, one_shot };
const char* to_string(ScheduleMode m);
ScheduleMode schedule_mode_from_string(const std::string& s);

struct ScheduleResult {
  NetworkGraph net;
  std::vector<EpochRecord> trajectory;
};

/// Prunes according to `plan` in stages (one planned layer, one block, or
/// everything at once), fine-tuning for cfg.epochs after each stage. Filters
/// selected by `freeze` stay fixed once their layer has been pruned.
ScheduleResult prune_finetune_schedule(const NetworkGraph& net, const PruningPlan& plan,
                                       const FreezeMask* freeze, const DatasetSource& data,
                                       const TrainConfig& cfg, ScheduleMode mode,
                                       const DatasetSource* eval = nullptr);

/// Tab-separated trajectory: stage, epoch, lr, loss, train_acc, eval_acc.
std::string trajectory_table(const std::vector<EpochRecord>& records);

}  // namespace hrank
