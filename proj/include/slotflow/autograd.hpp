#pragma once

// Minimal reverse-mode automatic differentiation over row-major dense matrices.
//
// A Tape records every operation applied to its Vars; backward() walks the
// record in reverse and accumulates gradients. Parameters live outside the
// tape and receive their gradients in Parameter::grad. Frozen parameters and
// constants are treated as detached leaves.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace slotflow {

using Index = Eigen::Index;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Mat<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat<T>::Zero(value.rows(), value.cols());
  }

  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool frozen = false;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

template <typename T>
class Tape {
 public:
  using Matrix = Mat<T>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves
  Var constant(Matrix value);
  Var constant_scalar(T value);
  /// Leaf that requires a gradient retrievable through grad().
  Var variable(Matrix value);
  /// Leaf bound to a parameter; detached when the parameter is frozen.
  Var param(Parameter<T>& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  T scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Backpropagates from a 1x1 root. Parameter gradients are accumulated (not overwritten).
  void backward(Var root);

  // Linear algebra
  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_bt(Var a, Var b);

  // Elementwise
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var add_row(Var a, Var row);
  Var mul_row(Var a, Var row);
  Var relu(Var a);
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var log(Var a);
  Var square(Var a);
  /// Values clamped into [lo, hi]; gradient passes only where the input is strictly inside.
  Var clamp(Var a, T lo, T hi);

  // Reductions
  Var sum(Var a);
  Var mean(Var a);
  /// [n*group, m] -> [n, m], mean over consecutive row groups.
  Var group_mean_rows(Var a, Index group);
  /// [n*group, m] -> [n, m], max over consecutive row groups.
  Var group_max_rows(Var a, Index group);

  // Normalization
  Var layer_norm(Var a, T eps);
  Var softmax_rows(Var a);

  // Shape
  /// Each row repeated `times` times consecutively.
  Var repeat_rows(Var a, Index times);
  /// Whole block stacked `times` times.
  Var tile_rows(Var a, Index times);
  Var slice_rows(Var a, Index start, Index count);
  Var concat_rows(std::span<const Var> parts);
  Var reshape(Var a, Index rows, Index cols);

  // Fused
  /// Multi-head self-attention. qkv is [batch*seq, 3*width] laid out as [q | k | v].
  Var attention(Var qkv, Index batch, Index seq, Index heads);
  /// Mean over the batch of the symmetric squared Chamfer distance between
  /// consecutive point blocks of `a` ([batch*na, 3]) and `b` ([batch*nb, 3]).
  Var chamfer(Var a, Var b, Index batch);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Parameter<T>* param = nullptr;
    std::function<void()> backward;
  };

  Var push(Matrix value, bool needs_grad);
  Matrix& grad_ref(std::size_t id);
  const Matrix& out_grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  // deque: references returned by value() stay valid while the tape grows
  std::deque<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace slotflow
