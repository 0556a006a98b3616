#pragma once

#include <random>
#include <vector>

#include "slotflow/nn.hpp"
#include "slotflow/types.hpp"

namespace slotflow {

/// Flattened silhouette -> hidden (ReLU) -> feature vector. Shared by the gate
/// head and the flow backbone's condition token.
template <typename T>
class ViewEncoder {
 public:
  ViewEncoder() = default;
  ViewEncoder(Index image_size, Index hidden, Index feature_dim, std::mt19937_64& rng);

  /// [batch, size*size] -> [batch, feature_dim]
  Var forward(Tape<T>& tape, Var images);
  /// Returns a [1, feature_dim] row.
  Mat<T> encode_view(const ConditionImage& img);

  void collect(ParamList<T>& out);
  Index image_size() const { return image_size_; }

  Linear<T> hidden;
  Linear<T> output;

 private:
  Index image_size_ = 0;
};

/// Stacks images into a [n, size*size] matrix; throws on a size mismatch.
template <typename T>
Mat<T> image_rows(const std::vector<const ConditionImage*>& images, Index size);

extern template class ViewEncoder<float>;
extern template class ViewEncoder<double>;

}  // namespace slotflow
