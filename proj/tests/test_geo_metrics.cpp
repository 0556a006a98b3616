#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

#include "doctest.h"
#include "slotflow/error.hpp"
#include "slotflow/geo_metrics.hpp"
#include "oracles.hpp"

using namespace slotflow;
using testing::oracle_chamfer;
using testing::oracle_fscore;
using testing::oracle_mean_iou;

namespace {

Points pts(std::initializer_list<std::array<double, 3>> rows) {
  Points p(static_cast<Index>(rows.size()), 3);
  Index r = 0;
  for (const auto& row : rows) {
    p.row(r++) << row[0], row[1], row[2];
  }
  return p;
}

PartPointCloud part_at_cells(const std::vector<std::array<int, 3>>& cells, int res) {
  PartPointCloud pc;
  pc.points.resize(static_cast<Index>(cells.size()), 3);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      pc.points(static_cast<Index>(i), a) = static_cast<float>(-0.5 + (cells[i][static_cast<std::size_t>(a)] + 0.5) / res);
    }
  }
  return pc;
}

}  // namespace

TEST_CASE("chamfer_l2 hand examples") {
  CHECK(chamfer_l2(pts({{0, 0, 0}}), pts({{1, 0, 0}})) == doctest::Approx(2.0).epsilon(1e-15));
  const Points a = pts({{0.1, 0.2, 0.3}, {-0.2, 0.0, 0.4}});
  CHECK(chamfer_l2(a, a) == 0.0);
  CHECK_THROWS_AS(chamfer_l2(Points(0, 3), a), Error);
  CHECK_THROWS_AS(chamfer_l2(a, Points(0, 3)), Error);
}

TEST_CASE("fscore hand examples") {
  CHECK(fscore(pts({{0, 0, 0}, {1, 0, 0}}), pts({{0, 0, 0}}), 0.1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const Points a = pts({{0.1, 0.2, 0.3}, {-0.2, 0.0, 0.4}});
  CHECK(fscore(a, a) == 1.0);
  CHECK(fscore(pts({{0, 0, 0}}), pts({{1, 1, 1}})) == 0.0);
  CHECK_THROWS_AS(fscore(Points(0, 3), a), Error);
  CHECK_THROWS_AS(fscore(a, a, 0.0), Error);
}

TEST_CASE("chamfer and fscore match brute-force oracles on random clouds") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<Index> size(1, 128);
  for (int trial = 0; trial < 200; ++trial) {
    const Points a = testing::random_cloud(rng, size(rng));
    const Points b = testing::random_cloud(rng, size(rng));
    CHECK(std::abs(chamfer_l2(a, b) - oracle_chamfer(a, b)) <= 1e-9);
    CHECK(fscore(a, b, 0.1) == oracle_fscore(a, b, 0.1));
    // symmetry
    CHECK(std::abs(chamfer_l2(a, b) - chamfer_l2(b, a)) <= 1e-12);
    CHECK(std::abs(fscore(a, b) - fscore(b, a)) <= 1e-12);
  }
}

TEST_CASE("chamfer is zero for the same set in another order or with repeats") {
  std::mt19937_64 rng(5);
  const Points a = testing::random_cloud(rng, 40);
  Points b(80, 3);
  for (Index i = 0; i < 40; ++i) {
    b.row(i) = a.row(39 - i);
    b.row(40 + i) = a.row(i);
  }
  CHECK(chamfer_l2(a, b) == 0.0);
  Points c = a;
  c(7, 1) += 1e-3;
  CHECK(chamfer_l2(a, c) > 0.0);
}

TEST_CASE("voxelize cell indexing") {
  PointsF centre(1, 3);
  centre << 0.f, 0.f, 0.f;
  auto g1 = voxelize(centre, 1);
  CHECK(g1.count() == 1);
  CHECK(g1.occupied(0, 0, 0));

  PointsF p(1, 3);
  p << -0.4f, -0.4f, -0.4f;
  auto g2 = voxelize(p, 2);
  CHECK(g2.count() == 1);
  CHECK(g2.occupied(0, 0, 0));

  PointsF edge(2, 3);
  edge << 0.5f, 0.5f, 0.5f, -0.5f, -0.5f, -0.5f;
  auto g3 = voxelize(edge, 4);
  CHECK(g3.occupied(3, 3, 3));
  CHECK(g3.occupied(0, 0, 0));
  CHECK(g3.clamped_points == 0);

  PointsF out(1, 3);
  out << 0.9f, -0.7f, 0.1f;
  auto g4 = voxelize(out, 4);
  CHECK(g4.clamped_points == 1);
  CHECK(g4.occupied(3, 0, 2));
}

TEST_CASE("mean_pairwise_iou hand examples") {
  const int res = 4;
  auto a = part_at_cells({{0, 0, 0}, {1, 0, 0}}, res);
  auto b = part_at_cells({{1, 0, 0}, {2, 0, 0}}, res);
  CHECK(mean_pairwise_iou({a, b}, res) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(mean_pairwise_iou({a}, res) == 0.0);
  CHECK(mean_pairwise_iou({a, a}, res) == 1.0);
  auto far = part_at_cells({{3, 3, 3}}, res);
  CHECK(mean_pairwise_iou({a, far}, res) == 0.0);
  CHECK(max_pairwise_iou({a, b, far}, res) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("mean_pairwise_iou matches a set-based oracle and ignores part order") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> nparts(1, 5);
  std::uniform_int_distribution<Index> npts(1, 128);
  std::uniform_real_distribution<double> centre(-0.3, 0.3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PartPointCloud> parts(static_cast<std::size_t>(nparts(rng)));
    for (auto& p : parts) {
      // clustered clouds so parts overlap at 64^3 often enough to matter
      const double cx = centre(rng), cy = centre(rng), cz = centre(rng);
      Points q = testing::random_cloud(rng, npts(rng), -0.08, 0.08);
      q.col(0).array() += cx;
      q.col(1).array() += cy;
      q.col(2).array() += cz;
      p.points = q.cast<float>();
    }
    const double got = mean_pairwise_iou(parts, 64);
    CHECK(std::abs(got - oracle_mean_iou(parts, 64)) <= 1e-12);
    std::vector<PartPointCloud> shuffled = parts;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(std::abs(mean_pairwise_iou(shuffled, 64) - got) <= 1e-12);
  }
}

TEST_CASE("metrics report json is versioned") {
  MetricsReport r;
  r.fscore = 0.5;
  r.objects = 3;
  const auto j = to_json(r);
  CHECK(j.at("schema_version").get<int>() == MetricsReport::kSchemaVersion);
  for (const char* key : {"chamfer_l2", "fscore", "mean_pair_iou", "gate_count_accuracy", "gate_count_mae", "objects"}) {
    CHECK(j.contains(key));
  }
}
