#include "slotflow/autograd.hpp"

#include <cmath>
#include <limits>

#include "slotflow/error.hpp"

namespace slotflow {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw argument_error(std::string("autograd: ") + what);
}

}  // namespace

template <typename T>
Var Tape<T>::push(Matrix value, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename Tape<T>::Matrix& Tape<T>::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
Var Tape<T>::constant(Matrix value) {
  return push(std::move(value), false);
}

template <typename T>
Var Tape<T>::constant_scalar(T value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return push(std::move(m), false);
}

template <typename T>
Var Tape<T>::variable(Matrix value) {
  return push(std::move(value), true);
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
  Var v = push(p.value, !p.frozen);
  if (!p.frozen) nodes_[v.id].param = &p;
  return v;
}

template <typename T>
typename Tape<T>::Matrix Tape<T>::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
  require(nodes_[root.id].value.size() == 1, "backward root must be 1x1");
  if (!nodes_[root.id].needs_grad) return;
  grad_ref(root.id).setConstant(T(1));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward();
    if (n.param != nullptr) n.param->grad += nodes_[i].grad;
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), "matmul shape mismatch");
  Var out = push(value(a) * value(b), needs(a) || needs(b));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, b, out] {
      const Matrix& g = out_grad(out.id);
      if (needs(a)) grad_ref(a.id).noalias() += g * value(b).transpose();
      if (needs(b)) grad_ref(b.id).noalias() += value(a).transpose() * g;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::matmul_bt(Var a, Var b) {
  require(value(a).cols() == value(b).cols(), "matmul_bt shape mismatch");
  Var out = push(value(a) * value(b).transpose(), needs(a) || needs(b));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, b, out] {
      const Matrix& g = out_grad(out.id);
      if (needs(a)) grad_ref(a.id).noalias() += g * value(b);
      if (needs(b)) grad_ref(b.id).noalias() += g.transpose() * value(a);
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "add shape mismatch");
  Var out = push(value(a) + value(b), needs(a) || needs(b));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, b, out] {
      if (needs(a)) grad_ref(a.id) += out_grad(out.id);
      if (needs(b)) grad_ref(b.id) += out_grad(out.id);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::sub(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "sub shape mismatch");
  Var out = push(value(a) - value(b), needs(a) || needs(b));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, b, out] {
      if (needs(a)) grad_ref(a.id) += out_grad(out.id);
      if (needs(b)) grad_ref(b.id) -= out_grad(out.id);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
          "mul shape mismatch");
  Var out = push(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, b, out] {
      const Matrix& g = out_grad(out.id);
      if (needs(a)) grad_ref(a.id) += g.cwiseProduct(value(b));
      if (needs(b)) grad_ref(b.id) += g.cwiseProduct(value(a));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::scale(Var a, T s) {
  Var out = push(value(a) * s, needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, s, out] { grad_ref(a.id) += out_grad(out.id) * s; };
  }
  return out;
}

template <typename T>
Var Tape<T>::add_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row shape mismatch");
  Matrix v = value(a);
  v.rowwise() += value(row).row(0);
  Var out = push(std::move(v), needs(a) || needs(row));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, row, out] {
      const Matrix& g = out_grad(out.id);
      if (needs(a)) grad_ref(a.id) += g;
      if (needs(row)) grad_ref(row.id) += g.colwise().sum();
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::mul_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "mul_row shape mismatch");
  Matrix v = value(a);
  v.array().rowwise() *= value(row).row(0).array();
  Var out = push(std::move(v), needs(a) || needs(row));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, row, out] {
      const Matrix& g = out_grad(out.id);
      if (needs(a)) {
        Matrix ga = g;
        ga.array().rowwise() *= value(row).row(0).array();
        grad_ref(a.id) += ga;
      }
      if (needs(row)) grad_ref(row.id) += g.cwiseProduct(value(a)).colwise().sum();
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::relu(Var a) {
  Var out = push(value(a).cwiseMax(T(0)), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out] {
      grad_ref(a.id).array() +=
          (value(a).array() > T(0)).select(out_grad(out.id).array(), T(0));
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::gelu(Var a) {
  // tanh approximation
  const T k0 = T(0.7978845608028654);
  const T k1 = T(0.044715);
  const auto& x = value(a).array();
  Matrix y = (T(0.5) * x * (T(1) + (k0 * (x + k1 * x.cube())).tanh())).matrix();
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, k0, k1] {
      const auto& x = value(a).array();
      auto th = (k0 * (x + k1 * x.cube())).tanh();
      auto d = T(0.5) * (T(1) + th) +
               T(0.5) * x * (T(1) - th.square()) * k0 * (T(1) + T(3) * k1 * x.square());
      grad_ref(a.id).array() += out_grad(out.id).array() * d;
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::sigmoid(Var a) {
  Matrix y = (T(1) / (T(1) + (-value(a).array()).exp())).matrix();
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out] {
      const auto& y = value(out).array();
      grad_ref(a.id).array() += out_grad(out.id).array() * y * (T(1) - y);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::log(Var a) {
  Var out = push(value(a).array().log().matrix(), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out] {
      grad_ref(a.id).array() += out_grad(out.id).array() / value(a).array();
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::square(Var a) {
  Var out = push(value(a).array().square().matrix(), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out] {
      grad_ref(a.id).array() += T(2) * out_grad(out.id).array() * value(a).array();
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::clamp(Var a, T lo, T hi) {
  Var out = push(value(a).cwiseMax(lo).cwiseMin(hi), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, lo, hi] {
      const auto& x = value(a).array();
      grad_ref(a.id).array() += ((x > lo) && (x < hi)).select(out_grad(out.id).array(), T(0));
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var Tape<T>::sum(Var a) {
  Matrix s(1, 1);
  s(0, 0) = value(a).sum();
  Var out = push(std::move(s), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out] {
      grad_ref(a.id).array() += out_grad(out.id)(0, 0);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::mean(Var a) {
  const T n = static_cast<T>(value(a).size());
  return scale(sum(a), T(1) / n);
}

template <typename T>
Var Tape<T>::group_mean_rows(Var a, Index group) {
  const Matrix& x = value(a);
  require(group > 0 && x.rows() % group == 0, "group_mean_rows: rows not divisible");
  const Index n = x.rows() / group;
  Matrix y(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    y.row(i) = x.middleRows(i * group, group).colwise().sum() / static_cast<T>(group);
  }
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, group, n] {
      const Matrix& g = out_grad(out.id);
      Matrix& ga = grad_ref(a.id);
      for (Index i = 0; i < n; ++i) {
        for (Index r = 0; r < group; ++r) ga.row(i * group + r) += g.row(i) / static_cast<T>(group);
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::group_max_rows(Var a, Index group) {
  const Matrix& x = value(a);
  require(group > 0 && x.rows() % group == 0, "group_max_rows: rows not divisible");
  const Index n = x.rows() / group;
  Matrix y(n, x.cols());
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n * x.cols()));
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < x.cols(); ++c) {
      Index best = i * group;
      for (Index r = 1; r < group; ++r) {
        if (x(i * group + r, c) > x(best, c)) best = i * group + r;
      }
      y(i, c) = x(best, c);
      (*argmax)[static_cast<std::size_t>(i * x.cols() + c)] = best;
    }
  }
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, n, argmax] {
      const Matrix& g = out_grad(out.id);
      Matrix& ga = grad_ref(a.id);
      for (Index i = 0; i < n; ++i) {
        for (Index c = 0; c < g.cols(); ++c) {
          ga((*argmax)[static_cast<std::size_t>(i * g.cols() + c)], c) += g(i, c);
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var Tape<T>::layer_norm(Var a, T eps) {
  const Matrix& x = value(a);
  const Index d = x.cols();
  Matrix y(x.rows(), d);
  auto inv_std = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const T mu = x.row(r).mean();
    const T var = (x.row(r).array() - mu).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    y.row(r) = ((x.row(r).array() - mu) * is).matrix();
  }
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, inv_std, d] {
      const Matrix& g = out_grad(out.id);
      const Matrix& y = value(out);
      Matrix& ga = grad_ref(a.id);
      for (Index r = 0; r < g.rows(); ++r) {
        const T gm = g.row(r).mean();
        const T gy = g.row(r).dot(y.row(r)) / static_cast<T>(d);
        ga.row(r).array() +=
            (*inv_std)(r) * (g.row(r).array() - gm - y.row(r).array() * gy);
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::softmax_rows(Var a) {
  const Matrix& x = value(a);
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - mx).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out] {
      const Matrix& g = out_grad(out.id);
      const Matrix& y = value(out);
      Matrix& ga = grad_ref(a.id);
      for (Index r = 0; r < g.rows(); ++r) {
        const T dot = g.row(r).dot(y.row(r));
        ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape

template <typename T>
Var Tape<T>::repeat_rows(Var a, Index times) {
  const Matrix& x = value(a);
  require(times > 0, "repeat_rows: times must be positive");
  Matrix y(x.rows() * times, x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index r = 0; r < times; ++r) y.row(i * times + r) = x.row(i);
  }
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, times] {
      const Matrix& g = out_grad(out.id);
      Matrix& ga = grad_ref(a.id);
      for (Index i = 0; i < ga.rows(); ++i) ga.row(i) += g.middleRows(i * times, times).colwise().sum();
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::tile_rows(Var a, Index times) {
  const Matrix& x = value(a);
  require(times > 0, "tile_rows: times must be positive");
  Matrix y(x.rows() * times, x.cols());
  for (Index r = 0; r < times; ++r) y.middleRows(r * x.rows(), x.rows()) = x;
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, times] {
      const Matrix& g = out_grad(out.id);
      Matrix& ga = grad_ref(a.id);
      const Index n = ga.rows();
      for (Index r = 0; r < times; ++r) ga += g.middleRows(r * n, n);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::slice_rows(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= value(a).rows(), "slice_rows out of range");
  Var out = push(value(a).middleRows(start, count), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out, start, count] {
      grad_ref(a.id).middleRows(start, count) += out_grad(out.id);
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = value(parts[0]).cols();
  Index rows = 0;
  bool any = false;
  for (Var p : parts) {
    require(value(p).cols() == cols, "concat_rows: column mismatch");
    rows += value(p).rows();
    any = any || needs(p);
  }
  Matrix y(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    y.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var out = push(std::move(y), any);
  if (any) {
    std::vector<Var> ins(parts.begin(), parts.end());
    nodes_[out.id].backward = [this, ins = std::move(ins), out] {
      const Matrix& g = out_grad(out.id);
      Index at = 0;
      for (Var p : ins) {
        const Index n = value(p).rows();
        if (needs(p)) grad_ref(p.id) += g.middleRows(at, n);
        at += n;
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::reshape(Var a, Index rows, Index cols) {
  const Matrix& x = value(a);
  require(rows * cols == x.size(), "reshape: size mismatch");
  Matrix y = Eigen::Map<const Matrix>(x.data(), rows, cols);
  Var out = push(std::move(y), needs(a));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, out] {
      Matrix& ga = grad_ref(a.id);
      const Matrix& g = out_grad(out.id);
      ga += Eigen::Map<const Matrix>(g.data(), ga.rows(), ga.cols());
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fused ops

template <typename T>
Var Tape<T>::attention(Var qkv, Index batch, Index seq, Index heads) {
  const Matrix& x = value(qkv);
  require(x.rows() == batch * seq, "attention: rows != batch*seq");
  require(x.cols() % 3 == 0, "attention: qkv width must be divisible by 3");
  const Index width = x.cols() / 3;
  require(heads > 0 && width % heads == 0, "attention: width not divisible by heads");
  const Index dh = width / heads;
  const T scale_f = T(1) / std::sqrt(static_cast<T>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(batch * heads));
  Matrix y(batch * seq, width);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      auto q = x.block(b * seq, h * dh, seq, dh);
      auto k = x.block(b * seq, width + h * dh, seq, dh);
      auto v = x.block(b * seq, 2 * width + h * dh, seq, dh);
      Matrix s = (q * k.transpose()) * scale_f;
      for (Index r = 0; r < seq; ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      y.block(b * seq, h * dh, seq, dh).noalias() = s * v;
      (*probs)[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  }
  Var out = push(std::move(y), needs(qkv));
  if (needs(out)) {
    nodes_[out.id].backward = [this, qkv, out, batch, seq, heads, width, dh, scale_f, probs] {
      const Matrix& x = value(qkv);
      const Matrix& g = out_grad(out.id);
      Matrix& gx = grad_ref(qkv.id);
      for (Index b = 0; b < batch; ++b) {
        for (Index h = 0; h < heads; ++h) {
          const Matrix& p = (*probs)[static_cast<std::size_t>(b * heads + h)];
          auto q = x.block(b * seq, h * dh, seq, dh);
          auto k = x.block(b * seq, width + h * dh, seq, dh);
          auto v = x.block(b * seq, 2 * width + h * dh, seq, dh);
          auto go = g.block(b * seq, h * dh, seq, dh);
          gx.block(b * seq, 2 * width + h * dh, seq, dh).noalias() += p.transpose() * go;
          Matrix dp = go * v.transpose();
          Matrix ds(seq, seq);
          for (Index r = 0; r < seq; ++r) {
            const T dot = dp.row(r).dot(p.row(r));
            ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
          }
          ds *= scale_f;
          gx.block(b * seq, h * dh, seq, dh).noalias() += ds * k;
          gx.block(b * seq, width + h * dh, seq, dh).noalias() += ds.transpose() * q;
        }
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::chamfer(Var a, Var b, Index batch) {
  const Matrix& pa = value(a);
  const Matrix& pb = value(b);
  require(pa.cols() == 3 && pb.cols() == 3, "chamfer: points must be [n, 3]");
  require(batch > 0 && pa.rows() % batch == 0 && pb.rows() % batch == 0,
          "chamfer: rows not divisible by batch");
  const Index na = pa.rows() / batch;
  const Index nb = pb.rows() / batch;
  require(na > 0 && nb > 0, "chamfer: empty point set");

  // nearest neighbour indices: a -> b and b -> a, global row indices
  auto nn_ab = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(pa.rows()));
  auto nn_ba = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(pb.rows()));
  T total = 0;
  for (Index s = 0; s < batch; ++s) {
    auto A = pa.middleRows(s * na, na);
    auto B = pb.middleRows(s * nb, nb);
    // squared distances via expansion; exact nearest search on small blocks
    Eigen::Matrix<T, Eigen::Dynamic, 1> an = A.rowwise().squaredNorm();
    Eigen::Matrix<T, Eigen::Dynamic, 1> bn = B.rowwise().squaredNorm();
    Matrix d = -T(2) * (A * B.transpose());
    d.colwise() += an;
    d.rowwise() += bn.transpose();
    T sa = 0;
    for (Index i = 0; i < na; ++i) {
      Index j;
      d.row(i).minCoeff(&j);
      (*nn_ab)[static_cast<std::size_t>(s * na + i)] = s * nb + j;
      sa += (A.row(i) - B.row(j)).squaredNorm();
    }
    T sb = 0;
    for (Index j = 0; j < nb; ++j) {
      Index i;
      d.col(j).minCoeff(&i);
      (*nn_ba)[static_cast<std::size_t>(s * nb + j)] = s * na + i;
      sb += (A.row(i) - B.row(j)).squaredNorm();
    }
    total += sa / static_cast<T>(na) + sb / static_cast<T>(nb);
  }
  Matrix y(1, 1);
  y(0, 0) = total / static_cast<T>(batch);
  Var out = push(std::move(y), needs(a) || needs(b));
  if (needs(out)) {
    nodes_[out.id].backward = [this, a, b, out, batch, na, nb, nn_ab, nn_ba] {
      const T g = out_grad(out.id)(0, 0) / static_cast<T>(batch);
      const Matrix& pa = value(a);
      const Matrix& pb = value(b);
      const T ca = T(2) * g / static_cast<T>(na);
      const T cb = T(2) * g / static_cast<T>(nb);
      Matrix* ga = needs(a) ? &grad_ref(a.id) : nullptr;
      Matrix* gb = needs(b) ? &grad_ref(b.id) : nullptr;
      for (Index i = 0; i < pa.rows(); ++i) {
        const Index j = (*nn_ab)[static_cast<std::size_t>(i)];
        const auto diff = (pa.row(i) - pb.row(j)).eval();
        if (ga) ga->row(i) += ca * diff;
        if (gb) gb->row(j) -= ca * diff;
      }
      for (Index j = 0; j < pb.rows(); ++j) {
        const Index i = (*nn_ba)[static_cast<std::size_t>(j)];
        const auto diff = (pa.row(i) - pb.row(j)).eval();
        if (ga) ga->row(i) += cb * diff;
        if (gb) gb->row(j) -= cb * diff;
      }
    };
  }
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace slotflow
