#include "slotflow/nn.hpp"

#include <cmath>

namespace slotflow {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x5107f10bu};
  return std::mt19937_64(seq);
}

template <typename T>
Mat<T> normal_matrix(std::mt19937_64& rng, Index rows, Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

template Mat<float> normal_matrix<float>(std::mt19937_64&, Index, Index, double);
template Mat<double> normal_matrix<double>(std::mt19937_64&, Index, Index, double);

template <typename T>
Linear<T>::Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, bool with_bias)
    : has_bias(with_bias) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat<T> w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
  weight = Parameter<T>(name + ".weight", std::move(w));
  if (has_bias) bias = Parameter<T>(name + ".bias", Mat<T>::Zero(1, out));
}

template <typename T>
Var Linear<T>::forward(Tape<T>& tape, Var x) {
  Var y = tape.matmul(x, tape.param(weight));
  if (has_bias) y = tape.add_row(y, tape.param(bias));
  return y;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

template <typename T>
void Linear<T>::zero_weights() {
  weight.value.setZero();
  if (has_bias) bias.value.setZero();
}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, Index width)
    : gain(name + ".gain", Mat<T>::Ones(1, width)), offset(name + ".offset", Mat<T>::Zero(1, width)) {}

template <typename T>
Var LayerNorm<T>::forward(Tape<T>& tape, Var x) {
  Var y = tape.layer_norm(x, T(1e-5));
  y = tape.mul_row(y, tape.param(gain));
  return tape.add_row(y, tape.param(offset));
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out) {
  out.push_back(&gain);
  out.push_back(&offset);
}

template <typename T>
double grad_norm(const ParamList<T>& params) {
  double s = 0.0;
  for (const auto* p : params) {
    if (!p->frozen) s += p->grad.template cast<double>().squaredNorm();
  }
  return std::sqrt(s);
}

template double grad_norm<float>(const ParamList<float>&);
template double grad_norm<double>(const ParamList<double>&);

template <typename T>
void Adam<T>::step(const ParamList<T>& params, double clip_norm) {
  ++t_;
  double factor = 1.0;
  if (clip_norm > 0.0) {
    const double n = grad_norm(params);
    if (n > clip_norm) factor = clip_norm / n;
  }
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T step_size = static_cast<T>(lr_ * std::sqrt(bc2) / bc1);
  const T b1 = static_cast<T>(beta1_);
  const T b2 = static_cast<T>(beta2_);
  const T eps = static_cast<T>(eps_ * std::sqrt(bc2));
  for (Parameter<T>* p : params) {
    if (p->frozen) {
      p->zero_grad();
      continue;
    }
    auto [it, inserted] = state_.try_emplace(p);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Mat<T>::Zero(p->value.rows(), p->value.cols());
      mo.v = Mat<T>::Zero(p->value.rows(), p->value.cols());
    }
    if (auto d = decay_.find(p); d != decay_.end()) p->value *= static_cast<T>(1.0 - lr_ * d->second);
    const Mat<T> g = p->grad * static_cast<T>(factor);
    mo.m = b1 * mo.m + (T(1) - b1) * g;
    mo.v = b2 * mo.v + (T(1) - b2) * g.cwiseProduct(g);
    p->value.array() -= step_size * mo.m.array() / (mo.v.array().sqrt() + eps);
    p->zero_grad();
  }
}

template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace slotflow
