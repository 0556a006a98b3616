#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "slotflow/geo_metrics.hpp"
#include "slotflow/model.hpp"
#include "slotflow/synth_data.hpp"
#include "slotflow/trainer.hpp"

namespace slotflow {

struct EvalOptions {
  int steps = 32;
  std::uint64_t seed = 0;
  double tau = 0.5;
  /// Predicted parts are replaced by the ground-truth parts; validates metric plumbing.
  bool oracle_passthrough = false;
  int jobs = 1;
};

struct ObjectEval {
  std::string object_id;
  int n_true = 0;
  int n_pred = 0;
  double chamfer_l2 = 0.0;
  double fscore = 0.0;
  double pair_iou = 0.0;
};

struct EvalResult {
  MetricsReport report;
  std::vector<ObjectEval> objects;
};

/// Sampling seed used for held-out object i.
std::uint64_t object_seed(std::uint64_t seed, std::size_t i);

/// Generates every held-out object from its image and scores the assembled shape.
EvalResult evaluate(Model& model, const Dataset& heldout, const EvalOptions& opt);

nlohmann::json to_json(const EvalResult& r);

struct AblationRow {
  std::string setting;
  bool asg = true;
  bool pb = true;
  bool warmup = true;
  MetricsReport report;
};

/// The four settings of the component ablation, in table order:
/// w/o slot gating, w/o prototype bank, w/o warm-up, full.
std::vector<AblationRow> ablation_grid();

/// Trains and evaluates each row from a shared stage-0 model. `stage0` must
/// have the stage-0 marker; its config supplies every non-ablation setting.
/// When `full` is given, the full-pipeline row reuses it instead of retraining.
std::vector<AblationRow> run_ablation(const Model& stage0, const CheckpointMeta& meta, const Dataset& train,
                                      const Dataset& heldout, const EvalOptions& opt, TrainLog* log = nullptr,
                                      const MetricsReport* full = nullptr);

nlohmann::json to_json(const std::vector<AblationRow>& rows);
/// Markdown comparison table.
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace slotflow
