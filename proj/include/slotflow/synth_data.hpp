#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slotflow/types.hpp"

namespace slotflow {

struct GeneratorSpec {
  int min_parts = 2;
  int max_parts = 6;
  int p_max = 8;
  int points_per_part = 256;
};

/// Builds one composite object from primitive surfaces arranged by a template
/// family (table, chair, lamp, totem, single). Parts are stored in canonical
/// order: type id, then analytic part centre z, y, x, all ascending. The
/// assembled cloud is centred and scaled to fit [-0.45, 0.45]^3.
CompositeObject gen_object(const GeneratorSpec& spec, std::uint64_t seed);

/// True iff the object has fewer than 16 parts and every pair of parts has
/// voxel IoU (64^3 over [-0.5, 0.5]^3) strictly below iou_cap.
bool filter_object(const CompositeObject& obj, double iou_cap = 0.1);

/// Orthographic silhouette along +z: a pixel is 1 iff some point lands in it.
ConditionImage render_silhouette(const CompositeObject& obj, int size);

struct DatasetEntry {
  CompositeObject object;
  ConditionImage image;
};

struct Dataset {
  int points_per_part = 0;
  int render_size = 0;
  std::vector<DatasetEntry> entries;
};

/// Generates `count` filtered objects. Object i is drawn from seeds derived
/// from (base_seed, i); rejected draws are retried with the next attempt
/// index, so the result does not depend on `jobs`.
Dataset build_dataset(const GeneratorSpec& spec, int count, std::uint64_t base_seed,
                      int render_size, double iou_cap = 0.1, int jobs = 1);

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Individual file formats, exposed for tools and tests.
void write_ply(const std::filesystem::path& path, const PointsF& points, int type_id);
PointsF read_ply(const std::filesystem::path& path, const std::string& subject);
void write_pgm(const std::filesystem::path& path, const ConditionImage& img);
ConditionImage read_pgm(const std::filesystem::path& path, const std::string& subject);

}  // namespace slotflow
