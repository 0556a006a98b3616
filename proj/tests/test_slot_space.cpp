#include "doctest.h"
#include "slotflow/error.hpp"
#include "slotflow/slot_space.hpp"
#include "slotflow/view_encoder.hpp"
#include "support.hpp"

using namespace slotflow;

TEST_CASE("pack then unpack returns the parts and fills the rest with e_null") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> count(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = count(rng);
    std::vector<Mat<double>> parts;
    for (int i = 0; i < n; ++i) parts.push_back(testing::random_matrix(rng, 3, 5));
    const Mat<double> e_null = testing::random_matrix(rng, 1, 5);
    const auto packed = pack_slots(parts, 8, e_null);

    REQUIRE(packed.tensor.z.rows() == 24);
    const auto back = unpack_slots(packed.tensor, n);
    REQUIRE(back.size() == parts.size());
    for (int i = 0; i < n; ++i) CHECK(back[static_cast<std::size_t>(i)] == parts[static_cast<std::size_t>(i)]);
    for (Index i = n; i < 8; ++i) {
      for (Index k = 0; k < 3; ++k) CHECK(packed.tensor.slot(i).row(k) == e_null);
    }
    for (int i = 0; i < 8; ++i) CHECK(packed.mask[static_cast<std::size_t>(i)] == (i < n ? 1 : 0));
  }
}

TEST_CASE("pack_slots rejects too many parts and bad shapes") {
  const Mat<double> e_null = Mat<double>::Zero(1, 4);
  std::vector<Mat<double>> nine(9, Mat<double>::Zero(2, 4));
  try {
    pack_slots(nine, 8, e_null);
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capacity);
  }
  CHECK_THROWS_AS(pack_slots(std::vector<Mat<double>>{}, 8, e_null), Error);
  CHECK_THROWS_AS(pack_slots(std::vector<Mat<double>>{Mat<double>::Zero(2, 4), Mat<double>::Zero(3, 4)}, 8, e_null),
                  Error);
  CHECK_THROWS_AS(pack_slots(std::vector<Mat<double>>{Mat<double>::Zero(2, 4)}, 8, Mat<double>(Mat<double>::Zero(1, 3))), Error);
}

TEST_CASE("canonical mask and expanded mask") {
  const auto m = canonical_mask(5, 3);
  CHECK(m == SlotMask{1, 1, 1, 0, 0});
  CHECK(canonical_mask(3, 0) == SlotMask{0, 0, 0});
  const auto e = expand_mask<double>(SlotMask{0, 1}, 2, 3);
  CHECK(e.topRows(2).isZero());
  CHECK(e.bottomRows(2).isOnes());
}

TEST_CASE("slot summary equals a loop mean over tokens") {
  std::mt19937_64 rng(2);
  SlotTensor<double> z{4, 3, testing::random_matrix(rng, 12, 5)};
  const auto s = slot_summary(z);
  for (Index i = 0; i < 4; ++i) {
    for (Index c = 0; c < 5; ++c) {
      double acc = 0.0;
      for (Index k = 0; k < 3; ++k) acc += z.z(i * 3 + k, c);
      CHECK(std::abs(s(i, c) - acc / 3.0) < 1e-15);
    }
  }
}

TEST_CASE("view encoder: zero image with zero biases gives a zero feature") {
  std::mt19937_64 rng(3);
  ViewEncoder<float> enc(8, 16, 12, rng);
  enc.hidden.bias.value.setZero();
  enc.output.bias.value.setZero();
  ConditionImage img;
  img.size = 8;
  img.pixels.assign(64, 0.f);
  const auto f = enc.encode_view(img);
  CHECK(f.rows() == 1);
  CHECK(f.cols() == 12);
  CHECK(f.isZero());
}

TEST_CASE("view encoder is deterministic and checks the image size") {
  std::mt19937_64 rng_a(4), rng_b(4);
  ViewEncoder<float> a(8, 16, 12, rng_a), b(8, 16, 12, rng_b);
  ConditionImage img;
  img.size = 8;
  for (int i = 0; i < 64; ++i) img.pixels.push_back(static_cast<float>(i % 3 == 0));
  CHECK(a.encode_view(img) == b.encode_view(img));
  CHECK(a.encode_view(img) == a.encode_view(img));

  ConditionImage wrong;
  wrong.size = 4;
  wrong.pixels.assign(16, 1.f);
  try {
    a.encode_view(wrong);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}
