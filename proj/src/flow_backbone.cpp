#include "slotflow/flow_backbone.hpp"

#include <cmath>

#include "slotflow/error.hpp"

namespace slotflow {

template <typename T>
void BackboneBlock<T>::collect(ParamList<T>& out) {
  norm1.collect(out);
  qkv.collect(out);
  attn_out.collect(out);
  norm2.collect(out);
  ffn_in.collect(out);
  ffn_out.collect(out);
}

template <typename T>
FlowBackbone<T>::FlowBackbone(const BackboneShape& s, std::mt19937_64& rng)
    : in_proj("backbone.in_proj", s.latent_dim, s.width, rng),
      slot_embed("backbone.slot_embed", normal_matrix<T>(rng, s.p_max, s.width, 0.02)),
      token_embed("backbone.token_embed", normal_matrix<T>(rng, s.tokens, s.width, 0.02)),
      cond_proj("backbone.cond_proj", s.feature_dim, s.width, rng),
      time_in("backbone.time_in", s.time_dim, s.width, rng),
      time_out("backbone.time_out", s.width, s.width, rng),
      final_norm("backbone.final_norm", s.width),
      out_proj("backbone.out_proj", s.width, s.latent_dim, rng),
      shape_(s) {
  if (s.width % s.heads != 0) throw config_error("backbone width must be divisible by the head count");
  if (s.time_dim % 2 != 0) throw config_error("time embedding width must be even");
  for (Index b = 0; b < s.blocks; ++b) {
    const std::string p = "backbone.block" + std::to_string(b);
    blocks.push_back({LayerNorm<T>(p + ".norm1", s.width), Linear<T>(p + ".qkv", s.width, 3 * s.width, rng),
                      Linear<T>(p + ".attn_out", s.width, s.width, rng), LayerNorm<T>(p + ".norm2", s.width),
                      Linear<T>(p + ".ffn_in", s.width, s.ffn, rng), Linear<T>(p + ".ffn_out", s.ffn, s.width, rng)});
  }
  // Start from a zero velocity field, as DiT does with its final layer.
  out_proj.zero_weights();
}

template <typename T>
Mat<T> time_embedding(const std::vector<double>& t, Index dim) {
  const Index half = dim / 2;
  Mat<T> e(static_cast<Index>(t.size()), dim);
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (Index i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double a = 1000.0 * t[r] * freq;
      e(static_cast<Index>(r), i) = static_cast<T>(std::cos(a));
      e(static_cast<Index>(r), half + i) = static_cast<T>(std::sin(a));
    }
  }
  return e;
}

template <typename T>
Var FlowBackbone<T>::forward(Tape<T>& tape, Var z_in, const std::vector<double>& t, Var features, Index batch) {
  const Index pk = shape_.p_max * shape_.tokens;
  const Index seq = pk + 1;
  if (tape.value(z_in).rows() != batch * pk || tape.value(z_in).cols() != shape_.latent_dim) {
    throw argument_error("backbone: slot tensor shape mismatch");
  }
  if (static_cast<Index>(t.size()) != batch || tape.value(features).rows() != batch) {
    throw argument_error("backbone: batch mismatch");
  }

  Var pos = tape.add(tape.repeat_rows(tape.param(slot_embed), shape_.tokens),
                     tape.tile_rows(tape.param(token_embed), shape_.p_max));
  Var x = tape.add(in_proj.forward(tape, z_in), tape.tile_rows(pos, batch));

  Var temb = time_out.forward(tape, tape.gelu(time_in.forward(tape, tape.constant(time_embedding<T>(t, shape_.time_dim)))));
  Var cond = tape.add(cond_proj.forward(tape, features), temb);

  std::vector<Var> parts;
  parts.reserve(static_cast<std::size_t>(2 * batch));
  for (Index b = 0; b < batch; ++b) {
    parts.push_back(tape.slice_rows(cond, b, 1));
    parts.push_back(tape.slice_rows(x, b * pk, pk));
  }
  Var h = tape.concat_rows(parts);

  for (auto& blk : blocks) {
    Var a = tape.attention(blk.qkv.forward(tape, blk.norm1.forward(tape, h)), batch, seq, shape_.heads);
    h = tape.add(h, blk.attn_out.forward(tape, a));
    Var f = blk.ffn_out.forward(tape, tape.gelu(blk.ffn_in.forward(tape, blk.norm2.forward(tape, h))));
    h = tape.add(h, f);
  }

  Var out = out_proj.forward(tape, final_norm.forward(tape, h));
  parts.clear();
  for (Index b = 0; b < batch; ++b) parts.push_back(tape.slice_rows(out, b * seq + 1, pk));
  return tape.concat_rows(parts);
}

template <typename T>
Mat<T> FlowBackbone<T>::velocity(const Mat<T>& z_in, double t, const Mat<T>& feature_row) {
  if (!z_in.allFinite() || !feature_row.allFinite() || !std::isfinite(t)) {
    throw argument_error("velocity: non-finite input");
  }
  Tape<T> tape;
  Var v = forward(tape, tape.constant(z_in), {t}, tape.constant(feature_row), 1);
  return tape.value(v);
}

template <typename T>
void FlowBackbone<T>::collect(ParamList<T>& out) {
  in_proj.collect(out);
  out.push_back(&slot_embed);
  out.push_back(&token_embed);
  cond_proj.collect(out);
  time_in.collect(out);
  time_out.collect(out);
  for (auto& b : blocks) b.collect(out);
  final_norm.collect(out);
  out_proj.collect(out);
}

template <typename T>
void FlowBackbone<T>::collect_first_half(ParamList<T>& out) {
  in_proj.collect(out);
  out.push_back(&slot_embed);
  out.push_back(&token_embed);
  for (std::size_t b = 0; b < blocks.size() / 2; ++b) blocks[b].collect(out);
}

template <typename T>
SlotTensor<T> noise(const SlotTensor<T>& z0, const Mat<T>& eps, double t, const SlotMask& m) {
  if (!(t >= 0.0 && t <= 1.0)) throw argument_error("noise: t must lie in [0, 1]");
  if (eps.rows() != z0.z.rows() || eps.cols() != z0.z.cols() || static_cast<Index>(m.size()) != z0.slots) {
    throw argument_error("noise: shape mismatch");
  }
  SlotTensor<T> out = z0;
  const T tt = static_cast<T>(t);
  const T ts = static_cast<T>(1.0 - t);
  for (Index i = 0; i < z0.slots; ++i) {
    if (!m[static_cast<std::size_t>(i)]) continue;
    out.slot(i) = tt * z0.slot(i) + ts * eps.middleRows(i * z0.tokens, z0.tokens);
  }
  return out;
}

template <typename T>
Var loss_mflow(Tape<T>& tape, Var v, const Mat<T>& target, const Mat<T>& mask, Index batch) {
  const Mat<T>& vv = tape.value(v);
  if (vv.rows() != target.rows() || vv.cols() != target.cols() || mask.rows() != vv.rows() ||
      mask.cols() != vv.cols()) {
    throw argument_error("loss_mflow: shape mismatch");
  }
  Var diff = tape.mul(tape.sub(v, tape.constant(target)), tape.constant(mask));
  return tape.scale(tape.sum(tape.square(diff)), T(1) / static_cast<T>(batch));
}

double loss_mflow(const Mat<double>& v, const SlotTensor<double>& z0, const Mat<double>& eps, const SlotMask& m) {
  if (v.rows() != z0.z.rows() || v.cols() != z0.z.cols() || eps.rows() != v.rows() || eps.cols() != v.cols() ||
      static_cast<Index>(m.size()) != z0.slots) {
    throw argument_error("loss_mflow: shape mismatch");
  }
  Tape<double> tape;
  Var l = loss_mflow(tape, tape.constant(v), Mat<double>(z0.z - eps), expand_mask<double>(m, z0.tokens, v.cols()), 1);
  return tape.scalar(l);
}

namespace {

template <typename T>
Mat<T> softmax_assign(const Mat<T>& s, const Mat<T>& p) {
  Mat<T> logits = (s * p.transpose()) / std::sqrt(static_cast<T>(p.cols()));
  for (Index r = 0; r < logits.rows(); ++r) {
    logits.row(r).array() -= logits.row(r).maxCoeff();
    logits.row(r) = logits.row(r).array().exp().matrix();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

}  // namespace

template <typename T>
SlotTensor<T> euler_sample(Index p_max, Index tokens, const std::vector<int>& active, const Mat<T>& e_null,
                           const Mat<T>& prototypes, const SamplerOptions& opt, const VelocityFn<T>& velocity) {
  if (opt.steps < 1) throw argument_error("sample: steps must be >= 1");
  if (active.empty()) throw argument_error("sample: empty active slot set");
  const Index c = e_null.cols();
  std::vector<std::uint8_t> is_active(static_cast<std::size_t>(p_max), 0);
  for (int i : active) {
    if (i < 0 || i >= p_max) throw argument_error("sample: active slot out of range");
    is_active[static_cast<std::size_t>(i)] = 1;
  }

  auto rng = make_rng(opt.seed, 0x5a3b1e);
  SlotTensor<T> z{p_max, tokens, normal_matrix<T>(rng, p_max * tokens, c, 1.0)};
  for (Index i = 0; i < p_max; ++i) {
    if (!is_active[static_cast<std::size_t>(i)]) z.slot(i).rowwise() = e_null.row(0);
  }

  // Compensated accumulation keeps the 32-bit trajectory close to the exact sum.
  Mat<T> carry = Mat<T>::Zero(z.z.rows(), c);
  Mat<T> v_prev;
  const T dt = T(1) / static_cast<T>(opt.steps);
  const bool guided = opt.inject && opt.beta > 0.0 && prototypes.rows() > 0;
  for (int step = 0; step < opt.steps; ++step) {
    const double t = static_cast<double>(step) / static_cast<double>(opt.steps);
    Mat<T> z_in;
    if (guided && step > 0) {
      SlotTensor<T> estimate{p_max, tokens, z.z + static_cast<T>(1.0 - t) * v_prev};
      Mat<T> s_tilde = softmax_assign<T>(slot_summary(estimate), prototypes) * prototypes;
      const T b = static_cast<T>(opt.beta);
      z_in = z.z;
      for (int i : active) z_in.middleRows(i * tokens, tokens).rowwise() += b * s_tilde.row(i);
    } else {
      z_in = z.z;
    }
    Mat<T> v = velocity(z_in, t);
    for (int i : active) {
      auto zi = z.slot(i);
      auto ci = carry.middleRows(i * tokens, tokens);
      Mat<T> y = dt * v.middleRows(i * tokens, tokens) - ci;
      Mat<T> sum = zi + y;
      ci = (sum - zi) - y;
      zi = sum;
    }
    v_prev = std::move(v);
  }
  return z;
}

template struct BackboneBlock<float>;
template struct BackboneBlock<double>;
template class FlowBackbone<float>;
template class FlowBackbone<double>;

#define SLOTFLOW_INSTANTIATE(T)                                                                              \
  template Mat<T> time_embedding<T>(const std::vector<double>&, Index);                                       \
  template SlotTensor<T> noise<T>(const SlotTensor<T>&, const Mat<T>&, double, const SlotMask&);              \
  template Var loss_mflow<T>(Tape<T>&, Var, const Mat<T>&, const Mat<T>&, Index);                             \
  template SlotTensor<T> euler_sample<T>(Index, Index, const std::vector<int>&, const Mat<T>&, const Mat<T>&, \
                                         const SamplerOptions&, const VelocityFn<T>&);

SLOTFLOW_INSTANTIATE(float)
SLOTFLOW_INSTANTIATE(double)
#undef SLOTFLOW_INSTANTIATE

}  // namespace slotflow
