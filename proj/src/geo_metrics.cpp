#include "slotflow/geo_metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "slotflow/error.hpp"

namespace slotflow {

namespace {

// Squared distance from each row of `from` to its nearest row of `to`.
Eigen::VectorXd nearest_sq(const Points& from, const Points& to) {
  Eigen::VectorXd out(from.rows());
  for (Index i = 0; i < from.rows(); ++i) {
    out(i) = (to.rowwise() - from.row(i)).rowwise().squaredNorm().minCoeff();
  }
  return out;
}

void require_nonempty(const Points& a, const Points& b, const char* op) {
  if (a.rows() == 0 || b.rows() == 0) throw argument_error(std::string(op) + ": empty point set");
}

}  // namespace

double chamfer_l2(const Points& a, const Points& b) {
  require_nonempty(a, b, "chamfer_l2");
  return nearest_sq(a, b).mean() + nearest_sq(b, a).mean();
}

double fscore(const Points& pred, const Points& gt, double tau) {
  require_nonempty(pred, gt, "fscore");
  if (!(tau > 0.0)) throw argument_error("fscore: tau must be positive");
  const double t2 = tau * tau;
  const double precision = (nearest_sq(pred, gt).array() <= t2).cast<double>().mean();
  const double recall = (nearest_sq(gt, pred).array() <= t2).cast<double>().mean();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

OccupancyGrid::OccupancyGrid(int resolution, const Box3& bounds) : resolution_(resolution), bounds_(bounds) {
  if (resolution < 1) throw argument_error("occupancy grid: resolution must be >= 1");
  if (!((bounds.hi - bounds.lo).array() > 0.0).all()) throw argument_error("occupancy grid: degenerate bounds");
  const auto cells = static_cast<std::size_t>(resolution) * resolution * resolution;
  words_.assign((cells + 63) / 64, 0);
}

std::size_t OccupancyGrid::flat(int i, int j, int k) const {
  return (static_cast<std::size_t>(i) * resolution_ + j) * resolution_ + k;
}

bool OccupancyGrid::occupied(int i, int j, int k) const {
  const auto f = flat(i, j, k);
  return (words_[f / 64] >> (f % 64)) & 1u;
}

void OccupancyGrid::set(int i, int j, int k) {
  const auto f = flat(i, j, k);
  words_[f / 64] |= std::uint64_t{1} << (f % 64);
}

std::int64_t OccupancyGrid::count() const {
  std::int64_t n = 0;
  for (auto w : words_) n += std::popcount(w);
  return n;
}

std::int64_t OccupancyGrid::intersection_count(const OccupancyGrid& other) const {
  if (other.resolution_ != resolution_) throw argument_error("occupancy grid: resolution mismatch");
  std::int64_t n = 0;
  for (std::size_t w = 0; w < words_.size(); ++w) n += std::popcount(words_[w] & other.words_[w]);
  return n;
}

std::int64_t OccupancyGrid::union_count(const OccupancyGrid& other) const {
  if (other.resolution_ != resolution_) throw argument_error("occupancy grid: resolution mismatch");
  std::int64_t n = 0;
  for (std::size_t w = 0; w < words_.size(); ++w) n += std::popcount(words_[w] | other.words_[w]);
  return n;
}

OccupancyGrid voxelize(const PointsF& points, int resolution, const Box3& bounds) {
  OccupancyGrid grid(resolution, bounds);
  const Eigen::Vector3d extent = bounds.hi - bounds.lo;
  for (Index r = 0; r < points.rows(); ++r) {
    int idx[3];
    bool outside = false;
    for (int a = 0; a < 3; ++a) {
      const double p = points(r, a);
      if (p < bounds.lo(a) || p > bounds.hi(a)) outside = true;
      const double u = (p - bounds.lo(a)) / extent(a) * resolution;
      idx[a] = std::clamp(static_cast<int>(std::floor(u)), 0, resolution - 1);
    }
    if (outside) ++grid.clamped_points;
    grid.set(idx[0], idx[1], idx[2]);
  }
  return grid;
}

double grid_iou(const OccupancyGrid& a, const OccupancyGrid& b) {
  const auto u = a.union_count(b);
  if (u == 0) return 0.0;
  return static_cast<double>(a.intersection_count(b)) / static_cast<double>(u);
}

namespace {

std::vector<double> pair_ious(const std::vector<PartPointCloud>& parts, int resolution, const Box3& bounds) {
  std::vector<OccupancyGrid> grids;
  grids.reserve(parts.size());
  for (const auto& p : parts) grids.push_back(voxelize(p.points, resolution, bounds));
  std::vector<double> out;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    for (std::size_t j = i + 1; j < grids.size(); ++j) out.push_back(grid_iou(grids[i], grids[j]));
  }
  return out;
}

}  // namespace

double mean_pairwise_iou(const std::vector<PartPointCloud>& parts, int resolution, const Box3& bounds) {
  const auto ious = pair_ious(parts, resolution, bounds);
  if (ious.empty()) return 0.0;
  double s = 0.0;
  for (double v : ious) s += v;
  return s / static_cast<double>(ious.size());
}

double max_pairwise_iou(const std::vector<PartPointCloud>& parts, int resolution, const Box3& bounds) {
  const auto ious = pair_ious(parts, resolution, bounds);
  return ious.empty() ? 0.0 : *std::max_element(ious.begin(), ious.end());
}

nlohmann::json to_json(const MetricsReport& r) {
  return {
      {"schema_version", MetricsReport::kSchemaVersion},
      {"objects", r.objects},
      {"chamfer_l2", r.chamfer_l2},
      {"fscore", r.fscore},
      {"mean_pair_iou", r.mean_pair_iou},
      {"gate_count_accuracy", r.gate_count_accuracy},
      {"gate_count_mae", r.gate_count_mae},
  };
}

}  // namespace slotflow
