#include "slotflow/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <type_traits>

#include "slotflow/error.hpp"

namespace slotflow {

using nlohmann::json;

#define SLOTFLOW_CONFIG_FIELDS(X)                                                               \
  X(p_max) X(tokens_per_part) X(latent_dim) X(prototypes) X(feature_dim) X(points_per_part)      \
  X(render_size) X(min_parts) X(max_parts) X(train_objects) X(heldout_objects) X(iou_cap)        \
  X(codec_point_hidden) X(codec_point_features) X(codec_decoder_hidden) X(view_hidden)           \
  X(gate_hidden) X(backbone_width) X(backbone_blocks) X(backbone_heads) X(backbone_ffn)          \
  X(time_embed_dim) X(beta) X(tau) X(lambda_ce) X(lambda_count) X(lambda_ent) X(lambda_flow)     \
  X(sampler_steps) X(lr_stage0) X(lr_stage1) X(lr_stage2) X(epochs_stage0) X(epochs_stage1)      \
  X(epochs_stage2) X(batch_size) X(codec_batch_size) X(codec_noise) X(grad_clip) X(gate_weight_decay) X(gate_shift) X(seed)         \
  X(disable_gate) X(disable_bank) X(disable_warmup) X(freeze_first_half)

namespace {

template <typename V>
void assign_checked(V& field, const json& value, const std::string& key) {
  bool ok = false;
  if constexpr (std::is_same_v<V, bool>) {
    ok = value.is_boolean();
  } else if constexpr (std::is_same_v<V, std::uint64_t>) {
    ok = value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  } else if constexpr (std::is_integral_v<V>) {
    ok = value.is_number_integer();
  } else {
    ok = value.is_number();
  }
  if (!ok) throw config_error("config key '" + key + "' has the wrong type");
  field = value.get<V>();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw config_error("invalid config: " + what);
}

}  // namespace

void validate(const TrainConfig& c) {
  require(c.p_max >= 1 && c.p_max <= 16, "p_max must be in [1, 16]");
  require(c.tokens_per_part >= 1, "tokens_per_part must be >= 1");
  require(c.latent_dim >= 1, "latent_dim must be >= 1");
  require(c.prototypes >= 1, "prototypes must be >= 1");
  // the bank must stay much smaller than the number of distinct part shapes
  require(c.prototypes < kPrimitiveTypes * kTemplateFamilies * 4,
          "prototypes must be < " + std::to_string(kPrimitiveTypes * kTemplateFamilies * 4));
  require(c.feature_dim >= 1, "feature_dim must be >= 1");
  require(c.points_per_part >= 1, "points_per_part must be >= 1");
  require(c.render_size >= 1, "render_size must be >= 1");
  require(c.min_parts >= 1 && c.max_parts >= c.min_parts && c.max_parts <= c.p_max,
          "part range must satisfy 1 <= min_parts <= max_parts <= p_max");
  require(c.train_objects >= 0 && c.heldout_objects >= 0, "object counts must be >= 0");
  require(c.iou_cap > 0.0 && c.iou_cap <= 1.0, "iou_cap must be in (0, 1]");
  require(c.codec_point_hidden >= 1 && c.codec_point_features >= 1 && c.codec_decoder_hidden >= 1 &&
              c.view_hidden >= 1 && c.gate_hidden >= 1,
          "hidden widths must be >= 1");
  require(c.backbone_width >= 1 && c.backbone_blocks >= 1 && c.backbone_heads >= 1 && c.backbone_ffn >= 1,
          "backbone sizes must be >= 1");
  require(c.backbone_width % c.backbone_heads == 0, "backbone_width must be divisible by backbone_heads");
  require(c.time_embed_dim >= 2 && c.time_embed_dim % 2 == 0, "time_embed_dim must be even and >= 2");
  require(c.beta >= 0.0, "beta must be >= 0");
  require(c.tau > 0.0 && c.tau < 1.0, "tau must be in (0, 1)");
  require(c.lambda_ce >= 0.0 && c.lambda_count >= 0.0 && c.lambda_ent >= 0.0 && c.lambda_flow >= 0.0,
          "loss weights must be >= 0");
  require(c.sampler_steps >= 1, "sampler_steps must be >= 1");
  require(c.lr_stage0 >= 0.0 && c.lr_stage1 >= 0.0 && c.lr_stage2 >= 0.0, "learning rates must be >= 0");
  require(c.epochs_stage0 >= 0 && c.epochs_stage1 >= 0 && c.epochs_stage2 >= 0, "epochs must be >= 0");
  require(c.batch_size >= 1 && c.codec_batch_size >= 1, "batch sizes must be >= 1");
  require(c.codec_noise >= 0.0 && c.grad_clip >= 0.0 && c.gate_weight_decay >= 0.0,
          "codec_noise, grad_clip and gate_weight_decay must be >= 0");
  require(c.gate_shift >= 0 && c.gate_shift < c.render_size, "gate_shift must lie in [0, render_size)");
}

json to_json(const TrainConfig& cfg) {
  json j;
#define X(name) j[#name] = cfg.name;
  SLOTFLOW_CONFIG_FIELDS(X)
#undef X
  return j;
}

TrainConfig config_from_json(const json& j) {
  if (!j.is_object()) throw config_error("config must be a JSON object");
  TrainConfig cfg;
  std::map<std::string, std::function<void(const json&)>> setters;
#define X(name) setters[#name] = [&cfg](const json& v) { assign_checked(cfg.name, v, #name); };
  SLOTFLOW_CONFIG_FIELDS(X)
#undef X
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw config_error("unknown config key '" + key + "'");
    it->second(value);
  }
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw config_error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw config_error("cannot write config " + path.string());
  os << to_json(cfg).dump(2) << '\n';
}

}  // namespace slotflow
