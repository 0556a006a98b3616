#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "slotflow/types.hpp"

namespace slotflow {

/// Symmetric sum of mean squared nearest-neighbour distances.
double chamfer_l2(const Points& a, const Points& b);

/// Harmonic mean of precision (pred within tau of gt) and recall; 0 when both vanish.
double fscore(const Points& pred, const Points& gt, double tau = 0.1);

struct Box3 {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;

  static Box3 canonical() { return {Eigen::Vector3d::Constant(-0.5), Eigen::Vector3d::Constant(0.5)}; }
};

/// Dense occupancy bitset over a resolution^3 grid.
class OccupancyGrid {
 public:
  OccupancyGrid(int resolution, const Box3& bounds);

  int resolution() const { return resolution_; }
  const Box3& bounds() const { return bounds_; }
  bool occupied(int i, int j, int k) const;
  void set(int i, int j, int k);
  std::int64_t count() const;
  std::int64_t intersection_count(const OccupancyGrid& other) const;
  std::int64_t union_count(const OccupancyGrid& other) const;
  /// Number of points that fell outside the bounds and were clamped in.
  std::int64_t clamped_points = 0;

 private:
  std::size_t flat(int i, int j, int k) const;

  int resolution_;
  Box3 bounds_;
  std::vector<std::uint64_t> words_;
};

/// Half-open cells; coordinates on or beyond the max face land in the last cell.
OccupancyGrid voxelize(const PointsF& points, int resolution, const Box3& bounds = Box3::canonical());

double grid_iou(const OccupancyGrid& a, const OccupancyGrid& b);

/// Mean IoU over unordered part pairs; 0 with fewer than two parts.
double mean_pairwise_iou(const std::vector<PartPointCloud>& parts, int resolution = 64,
                         const Box3& bounds = Box3::canonical());
double max_pairwise_iou(const std::vector<PartPointCloud>& parts, int resolution = 64,
                        const Box3& bounds = Box3::canonical());

struct MetricsReport {
  static constexpr int kSchemaVersion = 1;

  double chamfer_l2 = 0.0;
  double fscore = 0.0;
  double mean_pair_iou = 0.0;
  double gate_count_accuracy = 0.0;
  double gate_count_mae = 0.0;
  int objects = 0;
};

nlohmann::json to_json(const MetricsReport& r);

}  // namespace slotflow
