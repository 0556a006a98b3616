#include "doctest.h"
#include "oracles.hpp"
#include "slotflow/error.hpp"
#include "slotflow/flow_backbone.hpp"

using namespace slotflow;

namespace {

double oracle_mflow(const Mat<double>& v, const SlotTensor<double>& z0, const Mat<double>& eps, const SlotMask& m) {
  double total = 0.0;
  for (Index i = 0; i < z0.slots; ++i) {
    if (!m[static_cast<std::size_t>(i)]) continue;
    for (Index j = 0; j < z0.tokens; ++j) {
      for (Index c = 0; c < v.cols(); ++c) {
        const Index r = i * z0.tokens + j;
        const double d = v(r, c) - (z0.z(r, c) - eps(r, c));
        total += d * d;
      }
    }
  }
  return total;
}

}  // namespace

TEST_CASE("noise endpoints are exact on active slots and null slots are untouched") {
  std::mt19937_64 rng(1);
  SlotTensor<double> z0{4, 3, testing::random_matrix(rng, 12, 5)};
  const Mat<double> eps = testing::random_matrix(rng, 12, 5);
  const auto m = canonical_mask(4, 2);
  const auto at1 = noise(z0, eps, 1.0, m);
  const auto at0 = noise(z0, eps, 0.0, m);
  const auto mid = noise(z0, eps, 0.3, m);
  for (Index i = 0; i < 4; ++i) {
    if (i < 2) {
      CHECK(at1.slot(i) == z0.slot(i));
      CHECK(at0.slot(i) == eps.middleRows(i * 3, 3));
    } else {
      CHECK(at1.slot(i) == z0.slot(i));
      CHECK(at0.slot(i) == z0.slot(i));
      CHECK(mid.slot(i) == z0.slot(i));
    }
  }
  CHECK_THROWS_AS(noise(z0, eps, 1.5, m), Error);
  CHECK_THROWS_AS(noise(z0, eps, -0.1, m), Error);
}

TEST_CASE("masked flow loss matches a triple-loop oracle") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> count(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    SlotTensor<double> z0{6, 4, testing::random_matrix(rng, 24, 8)};
    const Mat<double> eps = testing::random_matrix(rng, 24, 8);
    const Mat<double> v = testing::random_matrix(rng, 24, 8);
    SlotMask m(6);
    for (auto& x : m) x = count(rng) % 2;
    CHECK(std::abs(loss_mflow(v, z0, eps, m) - oracle_mflow(v, z0, eps, m)) <= 1e-9);
    CHECK(loss_mflow(v, z0, eps, SlotMask(6, 0)) == 0.0);
    CHECK(loss_mflow(Mat<double>(z0.z - eps), z0, eps, m) == 0.0);

    // permuting tokens within slots does not change the loss
    std::vector<Index> perm{2, 0, 3, 1};
    Mat<double> vp = v, zp = z0.z, ep = eps;
    for (Index i = 0; i < 6; ++i) {
      for (Index j = 0; j < 4; ++j) {
        vp.row(i * 4 + j) = v.row(i * 4 + perm[static_cast<std::size_t>(j)]);
        zp.row(i * 4 + j) = z0.z.row(i * 4 + perm[static_cast<std::size_t>(j)]);
        ep.row(i * 4 + j) = eps.row(i * 4 + perm[static_cast<std::size_t>(j)]);
      }
    }
    CHECK(loss_mflow(vp, SlotTensor<double>{6, 4, zp}, ep, m) == doctest::Approx(loss_mflow(v, z0, eps, m)).epsilon(1e-12));
  }
}

TEST_CASE("flow loss gradients through a micro backbone match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(testing::backbone_gradcheck(seed) < 1e-4);
}

TEST_CASE("backbone output shape, zero-initialised head and determinism") {
  std::mt19937_64 rng(3);
  BackboneShape shape = testing::micro_shape();
  FlowBackbone<float> net(shape, rng);
  const Mat<float> z = Mat<float>::Random(4, 4);
  const Mat<float> f = Mat<float>::Random(1, 3);
  const auto v = net.velocity(z, 0.4, f);
  CHECK(v.rows() == 4);
  CHECK(v.cols() == 4);
  CHECK(v.isZero());

  net.out_proj.weight.value.setRandom();
  CHECK(net.velocity(z, 0.4, f) == net.velocity(z, 0.4, f));
  CHECK(net.velocity(z, 0.4, f) != net.velocity(z, 0.6, f));
  Mat<float> bad = z;
  bad(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(net.velocity(bad, 0.4, f), Error);
}

TEST_CASE("time embedding has cos and sin halves") {
  const auto e = time_embedding<double>({0.0, 0.25}, 8);
  REQUIRE(e.rows() == 2);
  REQUIRE(e.cols() == 8);
  for (Index c = 0; c < 4; ++c) {
    CHECK(e(0, c) == 1.0);
    CHECK(e(0, 4 + c) == 0.0);
  }
  for (Index c = 0; c < 4; ++c) CHECK(e(1, c) * e(1, c) + e(1, 4 + c) * e(1, 4 + c) == doctest::Approx(1.0));
}

TEST_CASE("constant-velocity sampler recovers the target in 32-bit") {
  for (int steps : {1, 4, 32}) {
    CHECK(testing::constant_velocity_error(steps, 7, false) <= 1e-6);
    CHECK(testing::constant_velocity_error(steps, 8, true) <= 1e-6);
  }
}

TEST_CASE("sampler is seed-deterministic and validates its inputs") {
  const Mat<float> e_null = Mat<float>::Constant(1, 3, 0.5f);
  const Mat<float> protos = Mat<float>::Random(2, 3);
  SamplerOptions opt;
  opt.steps = 8;
  opt.seed = 11;
  auto vel = [](const Mat<float>& z, double t) { return Mat<float>(-z * static_cast<float>(t)); };
  const auto a = euler_sample<float>(3, 2, {0, 1}, e_null, protos, opt, vel);
  const auto b = euler_sample<float>(3, 2, {0, 1}, e_null, protos, opt, vel);
  CHECK(a.z == b.z);
  opt.seed = 12;
  CHECK(euler_sample<float>(3, 2, {0, 1}, e_null, protos, opt, vel).z != a.z);
  CHECK_THROWS_AS(euler_sample<float>(3, 2, {}, e_null, protos, opt, vel), Error);
  CHECK_THROWS_AS(euler_sample<float>(3, 2, {3}, e_null, protos, opt, vel), Error);
  opt.steps = 0;
  CHECK_THROWS_AS(euler_sample<float>(3, 2, {0}, e_null, protos, opt, vel), Error);
}
