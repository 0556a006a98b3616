#include "slotflow/proto_bank.hpp"

#include <cmath>
#include <limits>

#include "slotflow/error.hpp"

namespace slotflow {

template <typename T>
PrototypeBank<T>::PrototypeBank(Index count, Index latent_dim, std::mt19937_64& rng, double init_std)
    : prototypes("bank.prototypes", normal_matrix<T>(rng, count, latent_dim, init_std)) {}

template <typename T>
Var PrototypeBank<T>::assign(Tape<T>& tape, Var summaries) {
  const T scale = T(1) / std::sqrt(static_cast<T>(prototypes.value.cols()));
  Var logits = tape.scale(tape.matmul_bt(summaries, tape.param(prototypes)), scale);
  return tape.softmax_rows(logits);
}

template <typename T>
Var PrototypeBank<T>::aligned(Tape<T>& tape, Var weights) {
  return tape.matmul(weights, tape.param(prototypes));
}

namespace {

template <typename T>
Mat<T> broadcast_mask(const Mat<T>& mask, Index cols) {
  return mask * Mat<T>::Ones(1, cols);
}

Mat<double> mask_column(const SlotMask& m) {
  Mat<double> c(static_cast<Index>(m.size()), 1);
  for (std::size_t i = 0; i < m.size(); ++i) c(static_cast<Index>(i), 0) = m[i] ? 1.0 : 0.0;
  return c;
}

}  // namespace

template <typename T>
Var loss_rec(Tape<T>& tape, Var s, Var s_tilde, const Mat<T>& mask, Index batch) {
  const Mat<T>& sv = tape.value(s);
  if (mask.rows() != sv.rows() || mask.cols() != 1) throw argument_error("loss_rec: mask shape mismatch");
  Var diff = tape.mul(tape.sub(s, s_tilde), tape.constant(broadcast_mask(mask, sv.cols())));
  return tape.scale(tape.sum(tape.square(diff)), T(1) / static_cast<T>(batch));
}

template <typename T>
Var loss_ent(Tape<T>& tape, Var w, const Mat<T>& mask, Index batch) {
  const Mat<T>& wv = tape.value(w);
  if (mask.rows() != wv.rows() || mask.cols() != 1) throw argument_error("loss_ent: mask shape mismatch");
  Var logw = tape.log(tape.clamp(w, static_cast<T>(kEntropyFloor), std::numeric_limits<T>::max()));
  Var masked = tape.mul(tape.mul(w, logw), tape.constant(broadcast_mask(mask, wv.cols())));
  return tape.scale(tape.sum(masked), T(1) / static_cast<T>(batch));
}

Mat<double> assign(const Mat<double>& summaries, const Mat<double>& prototypes) {
  if (summaries.cols() != prototypes.cols()) throw argument_error("assign: latent width mismatch");
  Tape<double> tape;
  PrototypeBank<double> bank;
  bank.prototypes = Parameter<double>("bank.prototypes", prototypes);
  bank.prototypes.frozen = true;
  return tape.value(bank.assign(tape, tape.constant(summaries)));
}

Mat<double> aligned_summary(const Mat<double>& w, const Mat<double>& prototypes) {
  if (w.cols() != prototypes.rows()) throw argument_error("aligned_summary: prototype count mismatch");
  return w * prototypes;
}

double loss_rec(const Mat<double>& s, const Mat<double>& s_tilde, const SlotMask& m) {
  if (s.rows() != s_tilde.rows() || s.cols() != s_tilde.cols() || static_cast<std::size_t>(s.rows()) != m.size()) {
    throw argument_error("loss_rec: shape mismatch");
  }
  Tape<double> tape;
  return tape.scalar(loss_rec(tape, tape.constant(s), tape.constant(s_tilde), mask_column(m), 1));
}

double loss_ent(const Mat<double>& w, const SlotMask& m) {
  if (static_cast<std::size_t>(w.rows()) != m.size()) throw argument_error("loss_ent: shape mismatch");
  Tape<double> tape;
  return tape.scalar(loss_ent(tape, tape.constant(w), mask_column(m), 1));
}

double loss_all(double l_rec, double l_ent, double l_mflow, double lambda_ent, double lambda_flow) {
  if (lambda_ent < 0.0 || lambda_flow < 0.0) throw argument_error("loss_all: weights must be >= 0");
  return l_rec + lambda_ent * l_ent + lambda_flow * l_mflow;
}

template <typename T>
SlotTensor<T> inject(const SlotTensor<T>& z, const Mat<T>& s_tilde, double beta, const std::vector<int>& active) {
  if (beta < 0.0) throw argument_error("inject: beta must be >= 0");
  if (s_tilde.rows() != z.slots || s_tilde.cols() != z.latent_dim()) throw argument_error("inject: shape mismatch");
  SlotTensor<T> out = z;
  if (beta == 0.0) return out;
  const T b = static_cast<T>(beta);
  for (int i : active) {
    if (i < 0 || i >= z.slots) throw argument_error("inject: active slot out of range");
    out.slot(i).rowwise() += b * s_tilde.row(i);
  }
  return out;
}

template <typename T>
Mat<T> active_column(const std::vector<int>& active, Index slots) {
  Mat<T> c = Mat<T>::Zero(slots, 1);
  for (int i : active) c(i, 0) = T(1);
  return c;
}

template class PrototypeBank<float>;
template class PrototypeBank<double>;

#define SLOTFLOW_INSTANTIATE(T)                                                                   \
  template Var loss_rec<T>(Tape<T>&, Var, Var, const Mat<T>&, Index);                             \
  template Var loss_ent<T>(Tape<T>&, Var, const Mat<T>&, Index);                                  \
  template SlotTensor<T> inject<T>(const SlotTensor<T>&, const Mat<T>&, double, const std::vector<int>&); \
  template Mat<T> active_column<T>(const std::vector<int>&, Index);

SLOTFLOW_INSTANTIATE(float)
SLOTFLOW_INSTANTIATE(double)
#undef SLOTFLOW_INSTANTIATE

}  // namespace slotflow
