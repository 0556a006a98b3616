#pragma once

#include <cstdint>
#include <vector>

#include "slotflow/config.hpp"
#include "slotflow/flow_backbone.hpp"
#include "slotflow/gate_head.hpp"
#include "slotflow/part_codec.hpp"
#include "slotflow/proto_bank.hpp"
#include "slotflow/view_encoder.hpp"

namespace slotflow {

/// Training precision for the full system.
using Real = float;

struct GenerateOptions {
  int steps = 32;
  std::uint64_t seed = 0;
  double tau = 0.5;
};

struct Generation {
  std::vector<double> alpha;
  std::vector<int> active;
  SlotTensor<Real> latents;
  std::vector<PartPointCloud> parts;
};

/// All learnable components plus the frozen null embedding.
class Model {
 public:
  explicit Model(const TrainConfig& cfg);

  TrainConfig config;
  PartCodec<Real> codec;
  ViewEncoder<Real> view;
  GateHead<Real> gate;
  PrototypeBank<Real> bank;
  FlowBackbone<Real> backbone;
  Parameter<Real> e_null;
  /// Slot count used when the gate is disabled (rounded mean training part count).
  int fixed_count = 0;

  /// Every tensor in a stable order; names are unique.
  ParamList<Real> parameters();
  ParamList<Real> codec_parameters();
  ParamList<Real> view_parameters();
  ParamList<Real> gate_parameters();
  ParamList<Real> bank_parameters();
  ParamList<Real> backbone_parameters();

  std::vector<double> gate_probabilities(const ConditionImage& img);
  /// Active slot set: thresholded gate, or the leading fixed_count slots when the gate is disabled.
  std::vector<int> active_slots(const std::vector<double>& alpha, double tau) const;

  /// encode_view -> gate -> select -> sample -> decode, one part per active slot.
  Generation generate(const ConditionImage& img, const GenerateOptions& opt);
  /// Sampler only, for a given feature row and active set.
  SlotTensor<Real> sample(const std::vector<int>& active, const Mat<Real>& feature_row, int steps,
                          std::uint64_t seed);
};

/// Stream identifiers for make_rng; one per consumer of randomness.
enum RngStream : std::uint64_t {
  kStreamCodec = 1,
  kStreamView,
  kStreamGate,
  kStreamBank,
  kStreamBackbone,
  kStreamNull,
  kStreamStage0 = 100,
  kStreamStage1,
  kStreamStage2,
  kStreamShift1,
  kStreamShift2,
};

}  // namespace slotflow
