#pragma once

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "slotflow/checkpoint.hpp"
#include "slotflow/model.hpp"
#include "slotflow/synth_data.hpp"

namespace slotflow {

struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  std::map<std::string, double> terms;
};

/// Collects per-epoch loss terms and mirrors them as JSON lines
/// {"stage", "epoch", "term", "value"} when a stream is attached.
class TrainLog {
 public:
  explicit TrainLog(std::ostream* out = nullptr) : out_(out) {}

  void record(int stage, int epoch, const std::map<std::string, double>& terms);
  /// Values of one term over the epochs of a stage, in order.
  std::vector<double> series(int stage, const std::string& term) const;

  std::vector<EpochRecord> history;

 private:
  std::ostream* out_;
};

/// Clean slot tensors for a dataset, encoded once with the frozen codec.
struct LatentCache {
  Index slot_rows = 0;     // P_max * K
  Mat<Real> z0;            // [objects * P_max * K, C]
  Mat<Real> summaries;     // [objects * P_max, C]
  Mat<Real> images;        // [objects, S*S]
  std::vector<int> n_obj;

  Index objects() const { return static_cast<Index>(n_obj.size()); }
};

LatentCache encode_dataset(Model& model, const Dataset& ds);

/// Codec pretraining on individual parts by Chamfer reconstruction.
void stage0_train_codec(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log);
/// Gate and prototype warm-up on clean latents; codec and backbone untouched.
void stage1_warmup(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log);
/// Joint optimisation of the flow, prototype and gate losses.
void stage2_joint(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log);

/// Runs the stages selected by `stage` (-1 = all applicable, in order).
void train(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log, int stage = -1);

/// Pieces of a stage-2 step exposed for tests: the loss terms for one batch.
struct JointBatch {
  std::vector<Index> objects;
  std::vector<double> t;
  Mat<Real> eps;  // [batch * P_max * K, C]
  /// Optional separate gate input [batch, S*S]; empty means the gate sees the condition images.
  Mat<Real> gate_images;
};

struct JointLosses {
  Var mflow, rec, ent, all, gate;
  bool has_bank = false;
  bool has_gate = false;
};

JointLosses joint_losses(Tape<Real>& tape, Model& model, const LatentCache& cache, const JointBatch& batch);

}  // namespace slotflow
