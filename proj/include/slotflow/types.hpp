#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace slotflow {

using Index = Eigen::Index;

/// Point sets are [n, 3] row-major; storage is 32-bit, metrics run in 64-bit.
using PointsF = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

enum class Primitive : int { Box = 0, Sphere = 1, Cylinder = 2, Cone = 3 };
inline constexpr int kPrimitiveTypes = 4;
/// Object template families of the generator (table, chair, lamp, totem, single).
inline constexpr int kTemplateFamilies = 5;

struct PartPointCloud {
  PointsF points;
  int type_id = 0;
  int part_index = 0;
};

struct CompositeObject {
  std::vector<PartPointCloud> parts;
  int n_obj = 0;
  std::string object_id;
  std::string category_tag;
};

/// Square single-channel image, row 0 at the top (+y), column 0 at -x.
struct ConditionImage {
  int size = 0;
  std::vector<float> pixels;
  std::string camera_tag = "ortho+z";

  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row * size + col)]; }
  float& at(int row, int col) { return pixels[static_cast<std::size_t>(row * size + col)]; }
  bool operator==(const ConditionImage&) const = default;
};

/// Concatenation of all part clouds, widened to 64-bit.
Points assemble(const std::vector<PartPointCloud>& parts);

}  // namespace slotflow
