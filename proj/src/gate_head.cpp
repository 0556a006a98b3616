#include "slotflow/gate_head.hpp"

#include <algorithm>
#include <cmath>

#include "slotflow/error.hpp"

namespace slotflow {

template <typename T>
GateHead<T>::GateHead(Index feature_dim, Index hidden_dim, Index p_max, std::mt19937_64& rng)
    : hidden("gate.hidden", feature_dim, hidden_dim, rng), logits("gate.logits", hidden_dim, p_max, rng) {}

template <typename T>
Var clamp_probability(Tape<T>& tape, Var logit) {
  return tape.clamp(tape.sigmoid(logit), static_cast<T>(kGateEps), static_cast<T>(1.0 - kGateEps));
}

template <typename T>
Var GateHead<T>::forward(Tape<T>& tape, Var features) {
  Var h = tape.relu(hidden.forward(tape, features));
  return clamp_probability(tape, logits.forward(tape, h));
}

template <typename T>
std::vector<double> GateHead<T>::gate_forward(const Mat<T>& feature_row) {
  Tape<T> tape;
  Var a = forward(tape, tape.constant(feature_row));
  const auto& v = tape.value(a);
  std::vector<double> out(static_cast<std::size_t>(v.cols()));
  for (Index i = 0; i < v.cols(); ++i) out[static_cast<std::size_t>(i)] = static_cast<double>(v(0, i));
  return out;
}

template <typename T>
void GateHead<T>::collect(ParamList<T>& out) {
  hidden.collect(out);
  logits.collect(out);
}

template <typename T>
void GateHead<T>::zero_weights() {
  hidden.zero_weights();
  logits.zero_weights();
}

template <typename T>
Var loss_ce(Tape<T>& tape, Var alpha, const Mat<T>& mask) {
  const Mat<T>& a = tape.value(alpha);
  if (a.rows() != mask.rows() || a.cols() != mask.cols()) throw argument_error("loss_ce: shape mismatch");
  // m log a + (1 - m) log(1 - a)
  Var m = tape.constant(mask);
  Var not_m = tape.constant(Mat<T>::Ones(mask.rows(), mask.cols()) - mask);
  Var one_minus = tape.sub(tape.constant(Mat<T>::Ones(a.rows(), a.cols())), alpha);
  Var ll = tape.add(tape.mul(m, tape.log(alpha)), tape.mul(not_m, tape.log(one_minus)));
  const T denom = static_cast<T>(a.rows() * a.cols());
  return tape.scale(tape.sum(ll), T(-1) / denom);
}

template <typename T>
Var loss_count(Tape<T>& tape, Var alpha, const std::vector<int>& n_obj) {
  const Mat<T>& a = tape.value(alpha);
  if (static_cast<std::size_t>(a.rows()) != n_obj.size()) throw argument_error("loss_count: batch mismatch");
  Mat<T> target(a.rows(), 1);
  for (Index b = 0; b < a.rows(); ++b) target(b, 0) = static_cast<T>(n_obj[static_cast<std::size_t>(b)]);
  Var ones = tape.constant(Mat<T>::Ones(a.cols(), 1));
  Var diff = tape.sub(tape.matmul(alpha, ones), tape.constant(target));
  return tape.scale(tape.sum(tape.square(diff)), T(1) / static_cast<T>(a.rows()));
}

template <typename T>
Var loss_gate(Tape<T>& tape, Var alpha, const Mat<T>& mask, const std::vector<int>& n_obj, double lambda_ce,
              double lambda_count) {
  return tape.add(tape.scale(loss_ce(tape, alpha, mask), static_cast<T>(lambda_ce)),
                  tape.scale(loss_count(tape, alpha, n_obj), static_cast<T>(lambda_count)));
}

namespace {

Mat<double> clamped_row(const std::vector<double>& alpha) {
  Mat<double> a(1, static_cast<Index>(alpha.size()));
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    a(0, static_cast<Index>(i)) = std::clamp(alpha[i], kGateEps, 1.0 - kGateEps);
  }
  return a;
}

Mat<double> mask_row(const SlotMask& m) {
  Mat<double> r(1, static_cast<Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) r(0, static_cast<Index>(i)) = m[i] ? 1.0 : 0.0;
  return r;
}

}  // namespace

double loss_ce(const std::vector<double>& alpha, const SlotMask& m) {
  if (alpha.size() != m.size()) throw argument_error("loss_ce: alpha and mask lengths differ");
  Tape<double> tape;
  return tape.scalar(loss_ce(tape, tape.constant(clamped_row(alpha)), mask_row(m)));
}

double loss_count(const std::vector<double>& alpha, int n_obj) {
  Tape<double> tape;
  return tape.scalar(loss_count(tape, tape.constant(clamped_row(alpha)), std::vector<int>{n_obj}));
}

double loss_gate(const std::vector<double>& alpha, const SlotMask& m, int n_obj, double lambda_ce,
                 double lambda_count) {
  if (lambda_ce < 0.0 || lambda_count < 0.0) throw argument_error("loss_gate: weights must be >= 0");
  return lambda_ce * loss_ce(alpha, m) + lambda_count * loss_count(alpha, n_obj);
}

std::vector<int> select_active(const std::vector<double>& alpha, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw argument_error("select_active: tau must be in (0, 1)");
  if (alpha.empty()) throw argument_error("select_active: empty activation vector");
  std::vector<int> out;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] > tau) out.push_back(static_cast<int>(i));
  }
  if (out.empty()) {
    out.push_back(static_cast<int>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin()));
  }
  return out;
}

template class GateHead<float>;
template class GateHead<double>;

#define SLOTFLOW_INSTANTIATE(T)                                                                       \
  template Var clamp_probability<T>(Tape<T>&, Var);                                                    \
  template Var loss_ce<T>(Tape<T>&, Var, const Mat<T>&);                                               \
  template Var loss_count<T>(Tape<T>&, Var, const std::vector<int>&);                                  \
  template Var loss_gate<T>(Tape<T>&, Var, const Mat<T>&, const std::vector<int>&, double, double);

SLOTFLOW_INSTANTIATE(float)
SLOTFLOW_INSTANTIATE(double)
#undef SLOTFLOW_INSTANTIATE

}  // namespace slotflow
