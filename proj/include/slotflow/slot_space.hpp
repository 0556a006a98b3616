#pragma once

#include <cstdint>
#include <vector>

#include "slotflow/autograd.hpp"

namespace slotflow {

/// Binary slot mask, one entry per slot.
using SlotMask = std::vector<std::uint8_t>;

/// Latent state of one object: p_max slots of `tokens` rows each, stored as a
/// [p_max * tokens, latent_dim] matrix with slot i in rows [i*tokens, (i+1)*tokens).
template <typename T>
struct SlotTensor {
  Index slots = 0;
  Index tokens = 0;
  Mat<T> z;

  auto slot(Index i) { return z.middleRows(i * tokens, tokens); }
  auto slot(Index i) const { return z.middleRows(i * tokens, tokens); }
  Index latent_dim() const { return z.cols(); }
};

template <typename T>
struct PackedSlots {
  SlotTensor<T> tensor;
  SlotMask mask;
};

/// Copies the part token matrices into the leading slots and fills the rest
/// with the null embedding broadcast over the token axis.
template <typename T>
PackedSlots<T> pack_slots(const std::vector<Mat<T>>& part_tokens, Index p_max, const Mat<T>& e_null);

/// First n_obj slots, in order.
template <typename T>
std::vector<Mat<T>> unpack_slots(const SlotTensor<T>& z, Index n_obj);

/// Mask with ones on the first n_obj entries.
SlotMask canonical_mask(Index p_max, Index n_obj);

/// Per-slot mean over the token axis: [p_max, latent_dim].
template <typename T>
Mat<T> slot_summary(const SlotTensor<T>& z);

/// Expands a slot mask into a [slots*rows_per_slot, cols] 0/1 matrix.
template <typename T>
Mat<T> expand_mask(const SlotMask& mask, Index rows_per_slot, Index cols);

}  // namespace slotflow
