#include "doctest.h"
#include "slotflow/autograd.hpp"
#include "slotflow/error.hpp"
#include "slotflow/nn.hpp"
#include "support.hpp"

using namespace slotflow;
using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_matrix;

namespace {

using Builder = std::function<Var(Tape<double>&, std::vector<Var>&)>;

// Contracts the builder output against a fixed random weight matrix so every
// output entry contributes to the scalar, then compares gradients of each input.
double check_op(const Builder& build, std::vector<Mat<double>> inputs, std::uint64_t seed = 1) {
  Mat<double> weights;
  {
    Tape<double> t;
    std::vector<Var> vs;
    for (auto& x : inputs) vs.push_back(t.constant(x));
    const auto& out = t.value(build(t, vs));
    std::mt19937_64 rng(seed);
    weights = random_matrix(rng, out.rows(), out.cols());
  }
  auto scalar = [&](const std::vector<Mat<double>>& xs) {
    Tape<double> t;
    std::vector<Var> vs;
    for (auto& x : xs) vs.push_back(t.constant(x));
    return t.scalar(t.sum(t.mul(build(t, vs), t.constant(weights))));
  };

  Tape<double> t;
  std::vector<Var> vs;
  for (auto& x : inputs) vs.push_back(t.variable(x));
  Var loss = t.sum(t.mul(build(t, vs), t.constant(weights)));
  t.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto fk = [&](const Mat<double>& xk) {
      auto xs = inputs;
      xs[k] = xk;
      return scalar(xs);
    };
    worst = std::max(worst, max_relative_error(t.grad(vs[k]), numeric_gradient(fk, inputs[k])));
  }
  return worst;
}

Mat<double> away_from_zero(Mat<double> m) {
  for (Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 - v : 0.05 + v;
  }
  return m;
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  std::mt19937_64 rng(3);
  const auto a = random_matrix(rng, 4, 5);
  const auto b = random_matrix(rng, 4, 5);
  const auto c = random_matrix(rng, 5, 3);
  const auto row = random_matrix(rng, 1, 5);

  CHECK(check_op([](auto& t, auto& v) { return t.matmul(v[0], v[1]); }, {a, c}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.matmul_bt(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.add(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.sub(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.mul(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.scale(v[0], -1.7); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.add_row(v[0], v[1]); }, {a, row}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.mul_row(v[0], v[1]); }, {a, row}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.relu(v[0]); }, {away_from_zero(a)}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.gelu(v[0]); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.sigmoid(v[0]); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.square(v[0]); }, {a}) < 1e-6);
  Mat<double> pos = a.cwiseAbs().array() + 0.5;
  CHECK(check_op([](auto& t, auto& v) { return t.log(v[0]); }, {pos}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.clamp(v[0], -0.5, 0.5); }, {away_from_zero(a * 3.0)}) < 1e-6);
}

TEST_CASE("reductions, normalisation and shape ops match finite differences") {
  std::mt19937_64 rng(4);
  const auto a = random_matrix(rng, 6, 4);
  const auto b = random_matrix(rng, 2, 4);
  CHECK(check_op([](auto& t, auto& v) { return t.sum(v[0]); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.mean(v[0]); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.group_mean_rows(v[0], 3); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.group_max_rows(v[0], 2); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.layer_norm(v[0], 1e-5); }, {a}) < 1e-5);
  CHECK(check_op([](auto& t, auto& v) { return t.softmax_rows(v[0]); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.repeat_rows(v[0], 3); }, {b}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.tile_rows(v[0], 3); }, {b}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.slice_rows(v[0], 1, 3); }, {a}) < 1e-6);
  CHECK(check_op([](auto& t, auto& v) { return t.reshape(v[0], 3, 8); }, {a}) < 1e-6);
  CHECK(check_op(
            [](auto& t, auto& v) {
              std::vector<Var> parts{v[1], v[0], v[1]};
              return t.concat_rows(parts);
            },
            {a, b}) < 1e-6);
}

TEST_CASE("fused attention matches finite differences") {
  std::mt19937_64 rng(5);
  const auto qkv = random_matrix(rng, 2 * 3, 3 * 4);  // batch 2, seq 3, width 4, 2 heads
  CHECK(check_op([](auto& t, auto& v) { return t.attention(v[0], 2, 3, 2); }, {qkv}) < 1e-5);
}

TEST_CASE("attention equals an explicit per-head softmax") {
  std::mt19937_64 rng(6);
  const Index seq = 4, width = 6, heads = 3, dh = 2;
  const auto qkv = random_matrix(rng, seq, 3 * width);
  Tape<double> t;
  const Mat<double> out = t.value(t.attention(t.constant(qkv), 1, seq, heads));
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < seq; ++i) {
      std::vector<double> w(static_cast<std::size_t>(seq));
      double z = 0.0, mx = -1e300;
      for (Index j = 0; j < seq; ++j) {
        double s = 0.0;
        for (Index d = 0; d < dh; ++d) s += qkv(i, h * dh + d) * qkv(j, width + h * dh + d);
        w[static_cast<std::size_t>(j)] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[static_cast<std::size_t>(j)]);
      }
      for (auto& x : w) z += (x = std::exp(x - mx));
      for (Index d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (Index j = 0; j < seq; ++j) acc += w[static_cast<std::size_t>(j)] / z * qkv(j, 2 * width + h * dh + d);
        CHECK(out(i, h * dh + d) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("batched chamfer matches finite differences for both clouds") {
  std::mt19937_64 rng(7);
  const auto a = random_matrix(rng, 2 * 5, 3, 0.3);
  const auto b = random_matrix(rng, 2 * 4, 3, 0.3);
  CHECK(check_op([](auto& t, auto& v) { return t.chamfer(v[0], v[1], 2); }, {a, b}) < 1e-6);
}

TEST_CASE("frozen parameters are detached and receive no gradient") {
  std::mt19937_64 rng(8);
  Parameter<double> live("live", random_matrix(rng, 3, 3));
  Parameter<double> frozen("frozen", random_matrix(rng, 3, 3));
  frozen.frozen = true;
  Tape<double> t;
  Var loss = t.sum(t.square(t.matmul(t.param(live), t.param(frozen))));
  t.backward(loss);
  CHECK(live.grad.norm() > 0.0);
  CHECK(frozen.grad.norm() == 0.0);
}

TEST_CASE("parameter gradients accumulate across backward passes") {
  std::mt19937_64 rng(9);
  Parameter<double> p("p", random_matrix(rng, 2, 2));
  Mat<double> once;
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> t;
    t.backward(t.sum(t.square(t.param(p))));
    if (pass == 0) once = p.grad;
  }
  CHECK((p.grad - 2.0 * once).norm() < 1e-12);
}

TEST_CASE("shape errors are reported") {
  Tape<double> t;
  Var a = t.constant(Mat<double>::Zero(2, 3));
  Var b = t.constant(Mat<double>::Zero(3, 3));
  CHECK_THROWS_AS(t.add(a, b), Error);
  CHECK_THROWS_AS(t.matmul(a, a), Error);
  CHECK_THROWS_AS(t.backward(a), Error);
}

TEST_CASE("Adam with zero learning rate leaves weights unchanged") {
  std::mt19937_64 rng(10);
  Parameter<float> p("p", normal_matrix<float>(rng, 3, 3));
  const Mat<float> before = p.value;
  p.grad.setConstant(1.f);
  Adam<float> opt(0.0);
  opt.step({&p}, 1.0);
  CHECK(p.value == before);
  CHECK(p.grad.isZero());
}
