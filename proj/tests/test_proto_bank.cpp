#include "doctest.h"
#include "slotflow/error.hpp"
#include "slotflow/proto_bank.hpp"
#include "support.hpp"

using namespace slotflow;

namespace {

Mat<double> oracle_assign(const Mat<double>& s, const Mat<double>& p) {
  Mat<double> w(s.rows(), p.rows());
  for (Index i = 0; i < s.rows(); ++i) {
    std::vector<double> logit(static_cast<std::size_t>(p.rows()));
    double mx = -1e300;
    for (Index k = 0; k < p.rows(); ++k) {
      double dot = 0.0;
      for (Index c = 0; c < s.cols(); ++c) dot += s(i, c) * p(k, c);
      logit[static_cast<std::size_t>(k)] = dot / std::sqrt(static_cast<double>(s.cols()));
      mx = std::max(mx, logit[static_cast<std::size_t>(k)]);
    }
    double z = 0.0;
    for (auto& l : logit) z += std::exp(l - mx);
    for (Index k = 0; k < p.rows(); ++k) w(i, k) = std::exp(logit[static_cast<std::size_t>(k)] - mx) / z;
  }
  return w;
}

}  // namespace

TEST_CASE("assign hand examples and oracle") {
  std::mt19937_64 rng(1);
  const Mat<double> s = testing::random_matrix(rng, 5, 4);
  Mat<double> twins(2, 4);
  twins.row(0) = twins.row(1) = testing::random_matrix(rng, 1, 4);
  const auto w2 = assign(s, twins);
  CHECK((w2.array() == 0.5).all());
  CHECK((assign(s, testing::random_matrix(rng, 1, 4)).array() == 1.0).all());

  for (int trial = 0; trial < 50; ++trial) {
    const Mat<double> ss = testing::random_matrix(rng, 6, 8, 2.0);
    const Mat<double> p = testing::random_matrix(rng, 5, 8, 2.0);
    const auto w = assign(ss, p);
    const auto ref = oracle_assign(ss, p);
    for (Index i = 0; i < w.rows(); ++i) CHECK(std::abs(w.row(i).sum() - 1.0) <= 1e-12);
    CHECK((w - ref).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS_AS(assign(s, Mat<double>::Zero(2, 3)), Error);
}

TEST_CASE("softmax is invariant to a constant shift of a row's logits") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat<double> logits = testing::random_matrix(rng, 4, 6, 3.0);
    Mat<double> shifted = logits;
    for (Index i = 0; i < 4; ++i) shifted.row(i).array() += 100.0 * (i + 1);
    Tape<double> t;
    const Mat<double> a = t.value(t.softmax_rows(t.constant(logits)));
    const Mat<double> b = t.value(t.softmax_rows(t.constant(shifted)));
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("aligned summaries: one-hot picks a prototype and output stays in the hull") {
  std::mt19937_64 rng(3);
  const Mat<double> p = testing::random_matrix(rng, 4, 6);
  Mat<double> onehot = Mat<double>::Zero(1, 4);
  onehot(0, 2) = 1.0;
  CHECK(aligned_summary(onehot, p) == p.row(2));

  for (int trial = 0; trial < 50; ++trial) {
    const Mat<double> w = assign(testing::random_matrix(rng, 7, 6, 2.0), p);
    const Mat<double> st = aligned_summary(w, p);
    for (Index i = 0; i < st.rows(); ++i) {
      for (Index c = 0; c < st.cols(); ++c) {
        double loop = 0.0;
        for (Index k = 0; k < 4; ++k) loop += w(i, k) * p(k, c);
        CHECK(std::abs(st(i, c) - loop) <= 1e-12);
        CHECK(st(i, c) >= p.col(c).minCoeff() - 1e-12);
        CHECK(st(i, c) <= p.col(c).maxCoeff() + 1e-12);
      }
    }
  }
}

TEST_CASE("loss_rec, loss_ent and loss_all hand examples") {
  std::mt19937_64 rng(4);
  const Mat<double> s = testing::random_matrix(rng, 4, 3);
  CHECK(loss_rec(s, s, canonical_mask(4, 4)) == 0.0);
  const Mat<double> st = testing::random_matrix(rng, 4, 3);
  CHECK(loss_rec(s, st, canonical_mask(4, 0)) == 0.0);

  const Mat<double> p1 = testing::random_matrix(rng, 1, 3);
  const auto w1 = assign(s, p1);
  double manual = 0.0;
  for (Index i = 0; i < 2; ++i) manual += (s.row(i) - p1).squaredNorm();
  CHECK(loss_rec(s, aligned_summary(w1, p1), canonical_mask(4, 2)) == doctest::Approx(manual).epsilon(1e-12));

  Mat<double> uniform = Mat<double>::Constant(3, 4, 0.25);
  CHECK(loss_ent(uniform, SlotMask{1, 0, 0}) == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  Mat<double> onehot = Mat<double>::Zero(1, 4);
  onehot(0, 1) = 1.0;
  CHECK(loss_ent(onehot, SlotMask{1}) == 0.0);
  CHECK(loss_ent(uniform, SlotMask{0, 0, 0}) == 0.0);

  CHECK(loss_all(1.0, -1.0, 2.0, 0.01, 1.0) == doctest::Approx(2.99).epsilon(1e-15));
  CHECK(loss_all(1.5, -1.0, 2.0, 0.0, 0.0) == 1.5);
  CHECK(loss_all(0.0, 0.0, 0.0, 0.01, 1.0) == 0.0);
  CHECK_THROWS_AS(loss_all(1.0, 1.0, 1.0, -0.1, 1.0), Error);
}

TEST_CASE("inject adds beta times the aligned summary to active slots only") {
  std::mt19937_64 rng(5);
  SlotTensor<double> z{4, 3, testing::random_matrix(rng, 12, 5)};
  const Mat<double> st = testing::random_matrix(rng, 4, 5);
  const std::vector<int> active{0, 2};

  CHECK(inject(z, st, 0.0, active).z == z.z);
  const Mat<double> before = z.z;
  const auto a = inject(z, st, 0.3, active);
  const auto b = inject(z, st, 0.6, active);
  CHECK(z.z == before);
  for (Index i = 0; i < 4; ++i) {
    const bool on = i == 0 || i == 2;
    for (Index k = 0; k < 3; ++k) {
      if (on) {
        CHECK((a.slot(i).row(k) - z.slot(i).row(k) - 0.3 * st.row(i)).cwiseAbs().maxCoeff() < 1e-15);
        // linear in beta
        CHECK(((b.slot(i).row(k) - z.slot(i).row(k)) - 2.0 * (a.slot(i).row(k) - z.slot(i).row(k)))
                  .cwiseAbs()
                  .maxCoeff() < 1e-14);
      } else {
        CHECK(a.slot(i).row(k) == z.slot(i).row(k));
      }
    }
  }
  SlotTensor<double> single{1, 1, testing::random_matrix(rng, 1, 5)};
  const Mat<double> s1 = testing::random_matrix(rng, 1, 5);
  CHECK(inject(single, s1, 1.0, {0}).z == single.z + s1);
  CHECK_THROWS_AS(inject(z, st, -0.1, active), Error);
}

TEST_CASE("prototype losses match finite differences through the softmax") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    PrototypeBank<double> bank(3, 4, rng, 1.0);
    const Mat<double> s0 = testing::random_matrix(rng, 3, 4);
    Mat<double> mask(3, 1);
    mask << 1.0, 1.0, (trial % 2 ? 1.0 : 0.0);
    for (int which = 0; which < 2; ++which) {
      auto build = [&](Tape<double>& t, Var s) {
        Var w = bank.assign(t, s);
        return which == 0 ? loss_rec(t, s, bank.aligned(t, w), mask, 1) : loss_ent(t, w, mask, 1);
      };
      bank.prototypes.grad.setZero();
      Tape<double> t;
      Var s = t.variable(s0);
      t.backward(build(t, s));
      const Mat<double> grad_p = bank.prototypes.grad;

      auto fs = [&](const Mat<double>& v) {
        Tape<double> u;
        return u.scalar(build(u, u.constant(v)));
      };
      auto fp = [&](const Mat<double>& v) {
        const Mat<double> saved = bank.prototypes.value;
        bank.prototypes.value = v;
        Tape<double> u;
        const double out = u.scalar(build(u, u.constant(s0)));
        bank.prototypes.value = saved;
        return out;
      };
      CHECK(testing::max_relative_error(t.grad(s), testing::numeric_gradient(fs, s0)) < 1e-4);
      CHECK(testing::max_relative_error(grad_p, testing::numeric_gradient(fp, bank.prototypes.value)) < 1e-4);
    }
  }
}
