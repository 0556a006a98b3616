#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>

#include "slotflow/autograd.hpp"

namespace slotflow {

/// Deterministic generator for a (seed, stream) pair; streams keep components independent.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream);

template <typename T>
Mat<T> normal_matrix(std::mt19937_64& rng, Index rows, Index cols, double stddev = 1.0);

/// Affine layer y = x W + b with W stored [in, out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out, std::mt19937_64& rng, bool bias = true);

  Var forward(Tape<T>& tape, Var x);
  void collect(ParamList<T>& out);
  void zero_weights();

  Index in_features() const { return weight.value.rows(); }
  Index out_features() const { return weight.value.cols(); }

  Parameter<T> weight;
  Parameter<T> bias;
  bool has_bias = true;
};

/// Row-wise layer normalisation with learnable gain and offset.
template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, Index width);

  Var forward(Tape<T>& tape, Var x);
  void collect(ParamList<T>& out);

  Parameter<T> gain;
  Parameter<T> offset;
};

/// Adam with bias correction and optional global gradient-norm clipping.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update to every non-frozen parameter and clears all gradients.
  void step(const ParamList<T>& params, double clip_norm = 0.0);

  std::int64_t steps() const { return t_; }

  /// Decoupled weight decay (value -= lr * wd * value) for the listed parameters only.
  void decay(const ParamList<T>& params, double wd) {
    for (Parameter<T>* p : params) decay_[p] = wd;
  }

 private:
  struct Moments {
    Mat<T> m;
    Mat<T> v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::unordered_map<const Parameter<T>*, Moments> state_;
  std::unordered_map<const Parameter<T>*, double> decay_;
};

/// Global L2 norm of the gradients of the listed parameters.
template <typename T>
double grad_norm(const ParamList<T>& params);

extern template class Linear<float>;
extern template class Linear<double>;
extern template class LayerNorm<float>;
extern template class LayerNorm<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace slotflow
