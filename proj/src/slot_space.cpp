#include "slotflow/slot_space.hpp"

#include "slotflow/error.hpp"

namespace slotflow {

template <typename T>
PackedSlots<T> pack_slots(const std::vector<Mat<T>>& part_tokens, Index p_max, const Mat<T>& e_null) {
  const auto n = static_cast<Index>(part_tokens.size());
  if (n < 1) throw argument_error("pack_slots: at least one part is required");
  if (n > p_max) {
    throw Error(ErrorKind::Capacity, "pack_slots: " + std::to_string(n) + " parts exceed p_max " +
                                         std::to_string(p_max));
  }
  const Index k = part_tokens[0].rows();
  const Index c = part_tokens[0].cols();
  if (e_null.size() != c) throw argument_error("pack_slots: null embedding width mismatch");

  PackedSlots<T> out;
  out.tensor.slots = p_max;
  out.tensor.tokens = k;
  out.tensor.z.resize(p_max * k, c);
  for (Index i = 0; i < p_max; ++i) {
    if (i < n) {
      const auto& tok = part_tokens[static_cast<std::size_t>(i)];
      if (tok.rows() != k || tok.cols() != c) throw argument_error("pack_slots: token shape mismatch");
      out.tensor.slot(i) = tok;
    } else {
      out.tensor.slot(i).rowwise() = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(e_null.data(), c);
    }
  }
  out.mask = canonical_mask(p_max, n);
  return out;
}

template <typename T>
std::vector<Mat<T>> unpack_slots(const SlotTensor<T>& z, Index n_obj) {
  std::vector<Mat<T>> out;
  for (Index i = 0; i < n_obj; ++i) out.emplace_back(z.slot(i));
  return out;
}

SlotMask canonical_mask(Index p_max, Index n_obj) {
  SlotMask m(static_cast<std::size_t>(p_max), 0);
  for (Index i = 0; i < n_obj && i < p_max; ++i) m[static_cast<std::size_t>(i)] = 1;
  return m;
}

template <typename T>
Mat<T> slot_summary(const SlotTensor<T>& z) {
  Mat<T> s(z.slots, z.latent_dim());
  for (Index i = 0; i < z.slots; ++i) s.row(i) = z.slot(i).colwise().sum() / static_cast<T>(z.tokens);
  return s;
}

template <typename T>
Mat<T> expand_mask(const SlotMask& mask, Index rows_per_slot, Index cols) {
  Mat<T> m(static_cast<Index>(mask.size()) * rows_per_slot, cols);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    m.middleRows(static_cast<Index>(i) * rows_per_slot, rows_per_slot).setConstant(mask[i] ? T(1) : T(0));
  }
  return m;
}

#define SLOTFLOW_INSTANTIATE(T)                                                                    \
  template PackedSlots<T> pack_slots<T>(const std::vector<Mat<T>>&, Index, const Mat<T>&);          \
  template std::vector<Mat<T>> unpack_slots<T>(const SlotTensor<T>&, Index);                        \
  template Mat<T> slot_summary<T>(const SlotTensor<T>&);                                            \
  template Mat<T> expand_mask<T>(const SlotMask&, Index, Index);

SLOTFLOW_INSTANTIATE(float)
SLOTFLOW_INSTANTIATE(double)
#undef SLOTFLOW_INSTANTIATE

}  // namespace slotflow
