#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "slotflow/synth_data.hpp"

namespace slotflow {

/// Every tunable of the system. Serialized as a flat JSON object; unknown keys are rejected.
struct TrainConfig {
  // slot layout
  int p_max = 8;
  int tokens_per_part = 8;  // K
  int latent_dim = 32;      // C
  int prototypes = 12;      // M
  int feature_dim = 128;    // D

  // data
  int points_per_part = 256;
  int render_size = 32;
  int min_parts = 2;
  int max_parts = 6;
  int train_objects = 512;
  int heldout_objects = 64;
  double iou_cap = 0.1;

  // network widths
  int codec_point_hidden = 64;
  int codec_point_features = 128;
  int codec_decoder_hidden = 512;
  int view_hidden = 256;
  int gate_hidden = 64;
  int backbone_width = 128;
  int backbone_blocks = 4;
  int backbone_heads = 4;
  int backbone_ffn = 512;
  int time_embed_dim = 64;

  // losses and inference
  double beta = 0.1;
  double tau = 0.5;
  double lambda_ce = 1.0;
  double lambda_count = 0.1;
  double lambda_ent = 0.01;
  double lambda_flow = 1.0;
  int sampler_steps = 32;

  // optimisation
  double lr_stage0 = 1e-3;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 3e-4;
  int epochs_stage0 = 50;
  int epochs_stage1 = 30;
  int epochs_stage2 = 80;
  int batch_size = 8;
  int codec_batch_size = 32;
  double codec_noise = 0.01;
  double grad_clip = 1.0;
  double gate_weight_decay = 0.0;  // decoupled, view encoder + gate head only
  int gate_shift = 1;              // max random silhouette shift (pixels) for gate training
  std::uint64_t seed = 0;

  // ablations
  bool disable_gate = false;
  bool disable_bank = false;
  bool disable_warmup = false;
  bool freeze_first_half = false;

  GeneratorSpec generator_spec() const {
    return {min_parts, max_parts, p_max, points_per_part};
  }
};

void validate(const TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
/// Strict: every key must be known and correctly typed; missing keys keep defaults.
TrainConfig config_from_json(const nlohmann::json& j);

TrainConfig load_config(const std::filesystem::path& path);
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);

}  // namespace slotflow
