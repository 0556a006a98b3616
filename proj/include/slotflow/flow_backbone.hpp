#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "slotflow/nn.hpp"
#include "slotflow/slot_space.hpp"

namespace slotflow {

struct BackboneShape {
  Index p_max = 8;
  Index tokens = 8;
  Index latent_dim = 32;
  Index feature_dim = 128;
  Index width = 128;
  Index blocks = 4;
  Index heads = 4;
  Index ffn = 512;
  Index time_dim = 64;
};

template <typename T>
struct BackboneBlock {
  LayerNorm<T> norm1;
  Linear<T> qkv;
  Linear<T> attn_out;
  LayerNorm<T> norm2;
  Linear<T> ffn_in;
  Linear<T> ffn_out;

  void collect(ParamList<T>& out);
};

/// Pre-norm transformer over the P_max*K slot tokens plus one prepended
/// condition token (image feature projection + time embedding).
template <typename T>
class FlowBackbone {
 public:
  FlowBackbone() = default;
  FlowBackbone(const BackboneShape& shape, std::mt19937_64& rng);

  /// z_in [batch*P*K, C], t per object, features [batch, D] -> velocity [batch*P*K, C].
  Var forward(Tape<T>& tape, Var z_in, const std::vector<double>& t, Var features, Index batch);

  /// Single-object evaluation; throws on non-finite input.
  Mat<T> velocity(const Mat<T>& z_in, double t, const Mat<T>& feature_row);

  void collect(ParamList<T>& out);
  /// Parameters of the first half of the blocks (for partial unfreezing).
  void collect_first_half(ParamList<T>& out);

  const BackboneShape& shape() const { return shape_; }

  Linear<T> in_proj;
  Parameter<T> slot_embed;
  Parameter<T> token_embed;
  Linear<T> cond_proj;
  Linear<T> time_in;
  Linear<T> time_out;
  std::vector<BackboneBlock<T>> blocks;
  LayerNorm<T> final_norm;
  Linear<T> out_proj;

 private:
  BackboneShape shape_;
};

/// Sinusoidal embedding of 1000*t, [cos | sin] halves; one row per entry of t.
template <typename T>
Mat<T> time_embedding(const std::vector<double>& t, Index dim);

/// Z_t = t z0 + (1-t) eps on slots with m_i = 1; other slots copied from z0.
template <typename T>
SlotTensor<T> noise(const SlotTensor<T>& z0, const Mat<T>& eps, double t, const SlotMask& m);

/// Masked flow-matching loss over stacked objects; `mask` is the expanded 0/1
/// matrix matching v, and the sum is divided by `batch`.
template <typename T>
Var loss_mflow(Tape<T>& tape, Var v, const Mat<T>& target, const Mat<T>& mask, Index batch);

/// Single object, 64-bit: sum_i m_i sum_j ||v_ij - (z0_ij - eps_ij)||^2.
double loss_mflow(const Mat<double>& v, const SlotTensor<double>& z0, const Mat<double>& eps, const SlotMask& m);

template <typename T>
using VelocityFn = std::function<Mat<T>(const Mat<T>& z_in, double t)>;

struct SamplerOptions {
  int steps = 32;
  std::uint64_t seed = 0;
  double beta = 0.1;
  /// When false no prototype guidance is injected.
  bool inject = true;
};

/// Euler integration from the standard-normal prior (t=0) to data (t=1).
/// Only active slots move; all others hold e_null. From the second step on,
/// prototype guidance is computed from the running clean estimate
/// z + (1-t) v_prev and injected into the backbone input.
template <typename T>
SlotTensor<T> euler_sample(Index p_max, Index tokens, const std::vector<int>& active, const Mat<T>& e_null,
                           const Mat<T>& prototypes, const SamplerOptions& opt, const VelocityFn<T>& velocity);

extern template class FlowBackbone<float>;
extern template class FlowBackbone<double>;

}  // namespace slotflow
