#pragma once

#include <random>
#include <vector>

#include "slotflow/nn.hpp"
#include "slotflow/slot_space.hpp"

namespace slotflow {

/// Activation probabilities are clamped into [kGateEps, 1 - kGateEps].
inline constexpr double kGateEps = 1e-7;

template <typename T>
class GateHead {
 public:
  GateHead() = default;
  GateHead(Index feature_dim, Index hidden, Index p_max, std::mt19937_64& rng);

  /// [batch, feature_dim] -> clamped activation probabilities [batch, p_max]
  Var forward(Tape<T>& tape, Var features);
  std::vector<double> gate_forward(const Mat<T>& feature_row);

  void collect(ParamList<T>& out);
  void zero_weights();

  Linear<T> hidden;
  Linear<T> logits;
};

template <typename T>
Var clamp_probability(Tape<T>& tape, Var logits);

/// Batched losses. `mask` is [batch, p_max] of 0/1; results are batch means.
template <typename T>
Var loss_ce(Tape<T>& tape, Var alpha, const Mat<T>& mask);
template <typename T>
Var loss_count(Tape<T>& tape, Var alpha, const std::vector<int>& n_obj);
template <typename T>
Var loss_gate(Tape<T>& tape, Var alpha, const Mat<T>& mask, const std::vector<int>& n_obj, double lambda_ce,
              double lambda_count);

// Single-object evaluations in 64-bit. Inputs are clamped before use.
double loss_ce(const std::vector<double>& alpha, const SlotMask& m);
double loss_count(const std::vector<double>& alpha, int n_obj);
double loss_gate(const std::vector<double>& alpha, const SlotMask& m, int n_obj, double lambda_ce,
                 double lambda_count);

/// Indices with alpha > tau, ascending; falls back to {argmax} when none pass.
std::vector<int> select_active(const std::vector<double>& alpha, double tau);

extern template class GateHead<float>;
extern template class GateHead<double>;

}  // namespace slotflow
