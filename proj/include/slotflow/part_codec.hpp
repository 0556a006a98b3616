#pragma once

#include <random>

#include "slotflow/nn.hpp"
#include "slotflow/types.hpp"

namespace slotflow {

/// Point-cloud autoencoder standing in for the frozen 3D VAE.
///
/// Encoder: shared pointwise map 3 -> h1 -> h2 (ReLU), max-pool over points,
/// linear projection to K*C, reshaped to K tokens and layer-normalised per
/// token (no affine) so latents sit at unit scale. Max-pooling makes the
/// encoder exactly invariant to point order.
///
/// Decoder: flatten K*C -> hidden (ReLU) -> N*3 (no bias), plus one shared
/// 3-vector offset. With all weights zero every point sits at that offset.
template <typename T>
class PartCodec {
 public:
  PartCodec() = default;
  PartCodec(Index tokens, Index latent_dim, Index points, Index point_hidden, Index point_features,
            Index decoder_hidden, std::mt19937_64& rng);

  /// [batch*points, 3] -> [batch*tokens, latent_dim]
  Var encode(Tape<T>& tape, Var points, Index batch);
  /// [batch*tokens, latent_dim] -> [batch*points, 3]
  Var decode(Tape<T>& tape, Var tokens, Index batch);

  Mat<T> encode_part(const PartPointCloud& pc);
  PartPointCloud decode_part(const Mat<T>& tokens);

  void collect(ParamList<T>& out);
  void zero_weights();

  Index tokens() const { return tokens_; }
  Index latent_dim() const { return latent_dim_; }
  Index points() const { return points_; }

  Linear<T> point1;
  Linear<T> point2;
  Linear<T> project;
  Linear<T> expand;
  Linear<T> emit;
  Parameter<T> offset;

 private:
  Index tokens_ = 0;
  Index latent_dim_ = 0;
  Index points_ = 0;
};

extern template class PartCodec<float>;
extern template class PartCodec<double>;

}  // namespace slotflow
