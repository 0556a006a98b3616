#pragma once

#include <random>
#include <vector>

#include "slotflow/nn.hpp"
#include "slotflow/slot_space.hpp"

namespace slotflow {

/// M shared prototype vectors in the slot-summary space.
template <typename T>
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(Index count, Index latent_dim, std::mt19937_64& rng, double init_std = 0.1);

  /// Soft assignment w = softmax(s p^T / sqrt(C)) over prototypes: [n, M].
  Var assign(Tape<T>& tape, Var summaries);
  /// w p: [n, C].
  Var aligned(Tape<T>& tape, Var weights);

  void collect(ParamList<T>& out) { out.push_back(&prototypes); }
  Index count() const { return prototypes.value.rows(); }

  Parameter<T> prototypes;
};

/// Clamp floor applied to assignment weights before the logarithm in loss_ent.
inline constexpr double kEntropyFloor = 1e-12;

// Tape forms. `mask` is a 0/1 column over the stacked summary rows; `batch`
// divides the masked sums so the result is a per-object mean.
template <typename T>
Var loss_rec(Tape<T>& tape, Var s, Var s_tilde, const Mat<T>& mask, Index batch);
template <typename T>
Var loss_ent(Tape<T>& tape, Var w, const Mat<T>& mask, Index batch);

// Value forms, 64-bit.
Mat<double> assign(const Mat<double>& summaries, const Mat<double>& prototypes);
Mat<double> aligned_summary(const Mat<double>& w, const Mat<double>& prototypes);
double loss_rec(const Mat<double>& s, const Mat<double>& s_tilde, const SlotMask& m);
double loss_ent(const Mat<double>& w, const SlotMask& m);
double loss_all(double l_rec, double l_ent, double l_mflow, double lambda_ent, double lambda_flow);

/// Adds beta * s_tilde[i] to every token of each active slot. Returns a new tensor.
template <typename T>
SlotTensor<T> inject(const SlotTensor<T>& z, const Mat<T>& s_tilde, double beta, const std::vector<int>& active);

/// Per-slot-row 0/1 matrix [slots, 1] built from a list of active slot indices.
template <typename T>
Mat<T> active_column(const std::vector<int>& active, Index slots);

extern template class PrototypeBank<float>;
extern template class PrototypeBank<double>;

}  // namespace slotflow
