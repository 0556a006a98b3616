#include "slotflow/model.hpp"

#include <algorithm>

#include "slotflow/error.hpp"

namespace slotflow {

namespace {

BackboneShape backbone_shape(const TrainConfig& c) {
  return {c.p_max, c.tokens_per_part, c.latent_dim, c.feature_dim, c.backbone_width,
          c.backbone_blocks, c.backbone_heads, c.backbone_ffn, c.time_embed_dim};
}

template <typename Module>
ParamList<Real> gather(Module& m) {
  ParamList<Real> out;
  m.collect(out);
  return out;
}

}  // namespace

Model::Model(const TrainConfig& cfg) : config(cfg) {
  validate(cfg);
  auto rng_codec = make_rng(cfg.seed, kStreamCodec);
  auto rng_view = make_rng(cfg.seed, kStreamView);
  auto rng_gate = make_rng(cfg.seed, kStreamGate);
  auto rng_bank = make_rng(cfg.seed, kStreamBank);
  auto rng_backbone = make_rng(cfg.seed, kStreamBackbone);
  auto rng_null = make_rng(cfg.seed, kStreamNull);
  codec = PartCodec<Real>(cfg.tokens_per_part, cfg.latent_dim, cfg.points_per_part, cfg.codec_point_hidden,
                          cfg.codec_point_features, cfg.codec_decoder_hidden, rng_codec);
  view = ViewEncoder<Real>(cfg.render_size, cfg.view_hidden, cfg.feature_dim, rng_view);
  gate = GateHead<Real>(cfg.feature_dim, cfg.gate_hidden, cfg.p_max, rng_gate);
  bank = PrototypeBank<Real>(cfg.prototypes, cfg.latent_dim, rng_bank);
  backbone = FlowBackbone<Real>(backbone_shape(cfg), rng_backbone);
  e_null = Parameter<Real>("e_null", normal_matrix<Real>(rng_null, 1, cfg.latent_dim, 1.0));
  e_null.frozen = true;
  fixed_count = (cfg.min_parts + cfg.max_parts + 1) / 2;
}

ParamList<Real> Model::parameters() {
  ParamList<Real> out = codec_parameters();
  view.collect(out);
  gate.collect(out);
  bank.collect(out);
  backbone.collect(out);
  out.push_back(&e_null);
  return out;
}

ParamList<Real> Model::codec_parameters() { return gather(codec); }
ParamList<Real> Model::view_parameters() { return gather(view); }
ParamList<Real> Model::gate_parameters() { return gather(gate); }
ParamList<Real> Model::bank_parameters() { return gather(bank); }
ParamList<Real> Model::backbone_parameters() { return gather(backbone); }

std::vector<double> Model::gate_probabilities(const ConditionImage& img) {
  return gate.gate_forward(view.encode_view(img));
}

std::vector<int> Model::active_slots(const std::vector<double>& alpha, double tau) const {
  if (!config.disable_gate) return select_active(alpha, tau);
  std::vector<int> out(static_cast<std::size_t>(std::clamp(fixed_count, 1, config.p_max)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(i);
  return out;
}

SlotTensor<Real> Model::sample(const std::vector<int>& active, const Mat<Real>& feature_row, int steps,
                               std::uint64_t seed) {
  SamplerOptions opt;
  opt.steps = steps;
  opt.seed = seed;
  opt.beta = config.beta;
  opt.inject = !config.disable_bank;
  VelocityFn<Real> fn = [&](const Mat<Real>& z_in, double t) { return backbone.velocity(z_in, t, feature_row); };
  return euler_sample<Real>(config.p_max, config.tokens_per_part, active, e_null.value, bank.prototypes.value, opt, fn);
}

Generation Model::generate(const ConditionImage& img, const GenerateOptions& opt) {
  Generation g;
  Mat<Real> feature = view.encode_view(img);
  g.alpha = gate.gate_forward(feature);
  g.active = active_slots(g.alpha, opt.tau);
  g.latents = sample(g.active, feature, opt.steps, opt.seed);
  for (int i : g.active) {
    PartPointCloud pc = codec.decode_part(Mat<Real>(g.latents.slot(i)));
    pc.type_id = -1;
    pc.part_index = i;
    g.parts.push_back(std::move(pc));
  }
  return g;
}

}  // namespace slotflow
