#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <unistd.h>

#include "doctest.h"
#include "slotflow/error.hpp"
#include "slotflow/geo_metrics.hpp"
#include "slotflow/synth_data.hpp"

using namespace slotflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("slotflow_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PartPointCloud slab(double x0, double x1, double y0, double y1, double z, int n = 120) {
  PartPointCloud pc;
  pc.points.resize(n * n, 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      pc.points.row(i * n + j) << static_cast<float>(x0 + (x1 - x0) * i / (n - 1)),
          static_cast<float>(y0 + (y1 - y0) * j / (n - 1)), static_cast<float>(z);
    }
  }
  return pc;
}

CompositeObject object_of(std::vector<PartPointCloud> parts) {
  CompositeObject o;
  o.parts = std::move(parts);
  o.n_obj = static_cast<int>(o.parts.size());
  o.object_id = "hand";
  o.category_tag = "test";
  return o;
}

}  // namespace

TEST_CASE("gen_object honours the part range and is deterministic") {
  GeneratorSpec one{1, 1, 8, 64};
  CHECK(gen_object(one, 7).n_obj == 1);

  GeneratorSpec spec;
  const auto a = gen_object(spec, 1234);
  const auto b = gen_object(spec, 1234);
  REQUIRE(a.n_obj == b.n_obj);
  CHECK(a.object_id == b.object_id);
  for (int i = 0; i < a.n_obj; ++i) {
    CHECK(a.parts[static_cast<std::size_t>(i)].type_id == b.parts[static_cast<std::size_t>(i)].type_id);
    CHECK(a.parts[static_cast<std::size_t>(i)].points == b.parts[static_cast<std::size_t>(i)].points);
  }
}

TEST_CASE("gen_object rejects invalid specs") {
  CHECK_THROWS_AS(gen_object({0, 3, 8, 64}, 1), Error);
  CHECK_THROWS_AS(gen_object({4, 3, 8, 64}, 1), Error);
  CHECK_THROWS_AS(gen_object({2, 9, 8, 64}, 1), Error);
  try {
    gen_object({2, 9, 8, 64}, 1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("generated objects satisfy the part invariants") {
  GeneratorSpec spec;
  std::map<int, int> histogram;
  for (std::uint64_t seed = 0; seed < 512; ++seed) {
    const auto obj = gen_object(spec, seed);
    ++histogram[obj.n_obj];
    REQUIRE(static_cast<int>(obj.parts.size()) == obj.n_obj);
    CHECK(obj.n_obj >= spec.min_parts);
    CHECK(obj.n_obj <= spec.max_parts);
    for (std::size_t i = 0; i < obj.parts.size(); ++i) {
      const auto& p = obj.parts[i];
      CHECK(p.points.rows() == spec.points_per_part);
      CHECK(p.points.allFinite());
      CHECK(p.points.cwiseAbs().maxCoeff() <= 0.45f);
      CHECK(p.type_id >= 0);
      CHECK(p.type_id < kPrimitiveTypes);
      CHECK(p.part_index == static_cast<int>(i));
      // canonical order starts with the type id
      if (i > 0) CHECK(obj.parts[i - 1].type_id <= p.type_id);
    }
  }
  for (int n = 2; n <= 6; ++n) CHECK(histogram[n] > 0);
}

TEST_CASE("filter_object follows the part-count and overlap rules") {
  auto a = slab(-0.4, -0.2, -0.4, -0.2, 0.0, 20);
  auto b = slab(0.2, 0.4, 0.2, 0.4, 0.0, 20);
  CHECK(filter_object(object_of({a, b})));
  CHECK_FALSE(filter_object(object_of({a, a})));

  std::vector<PartPointCloud> many;
  for (int i = 0; i < 16; ++i) {
    const double x = -0.45 + 0.055 * i;
    many.push_back(slab(x, x + 0.01, -0.1, 0.1, 0.0, 5));
  }
  CHECK_FALSE(filter_object(object_of(many)));
  many.pop_back();
  CHECK(filter_object(object_of(many)));
}

TEST_CASE("render of an axis-aligned square covers the hand-rasterised cells") {
  const auto img = render_silhouette(object_of({slab(-0.2, 0.2, -0.2, 0.2, 0.1)}), 32);
  REQUIRE(img.size == 32);
  // x in [-0.2, 0.2] -> columns floor(0.3*32)=9 .. floor(0.7*32)=22; rows likewise.
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 32; ++c) {
      const bool inside = r >= 9 && r <= 22 && c >= 9 && c <= 22;
      CHECK(img.at(r, c) == (inside ? 1.0f : 0.0f));
    }
  }
}

TEST_CASE("render is unchanged by translation along the view axis") {
  const auto obj = gen_object(GeneratorSpec{}, 99);
  auto moved = obj;
  for (auto& p : moved.parts) p.points.col(2).array() -= 0.03f;
  CHECK(render_silhouette(obj, 32) == render_silhouette(moved, 32));
  const auto img = render_silhouette(obj, 32);
  float total = 0.f;
  for (float v : img.pixels) total += v;
  CHECK(total > 0.f);
}

TEST_CASE("build_dataset filters every object and does not depend on jobs") {
  GeneratorSpec spec;
  const auto serial = build_dataset(spec, 24, 3, 32, 0.1, 1);
  const auto threaded = build_dataset(spec, 24, 3, 32, 0.1, 3);
  REQUIRE(serial.entries.size() == 24);
  REQUIRE(threaded.entries.size() == 24);
  for (std::size_t i = 0; i < serial.entries.size(); ++i) {
    const auto& a = serial.entries[i];
    const auto& b = threaded.entries[i];
    CHECK(filter_object(a.object, 0.1));
    CHECK(max_pairwise_iou(a.object.parts) < 0.1);
    CHECK(a.object.object_id == b.object.object_id);
    CHECK(a.image == b.image);
    REQUIRE(a.object.parts.size() == b.object.parts.size());
    for (std::size_t p = 0; p < a.object.parts.size(); ++p) CHECK(a.object.parts[p].points == b.object.parts[p].points);
  }
  CHECK(build_dataset(spec, 0, 3, 32).entries.empty());
}

TEST_CASE("dataset round trip is lossless") {
  TempDir dir("roundtrip");
  const auto ds = build_dataset(GeneratorSpec{}, 10, 42, 32);
  write_dataset(ds, dir.path);
  const auto back = read_dataset(dir.path);
  CHECK(back.points_per_part == ds.points_per_part);
  CHECK(back.render_size == ds.render_size);
  REQUIRE(back.entries.size() == ds.entries.size());
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& a = ds.entries[i];
    const auto& b = back.entries[i];
    CHECK(a.object.object_id == b.object.object_id);
    CHECK(a.object.category_tag == b.object.category_tag);
    CHECK(a.object.n_obj == b.object.n_obj);
    CHECK(a.image == b.image);
    REQUIRE(a.object.parts.size() == b.object.parts.size());
    for (std::size_t p = 0; p < a.object.parts.size(); ++p) {
      CHECK(a.object.parts[p].type_id == b.object.parts[p].type_id);
      CHECK(a.object.parts[p].part_index == b.object.parts[p].part_index);
      CHECK(a.object.parts[p].points == b.object.parts[p].points);  // bit-exact floats
    }
  }
}

TEST_CASE("empty dataset round trip") {
  TempDir dir("empty");
  Dataset ds;
  ds.points_per_part = 256;
  ds.render_size = 32;
  write_dataset(ds, dir.path);
  CHECK(read_dataset(dir.path).entries.empty());
}

TEST_CASE("load errors name the offending object") {
  TempDir dir("errors");
  const auto ds = build_dataset(GeneratorSpec{}, 3, 8, 32);
  write_dataset(ds, dir.path);
  const auto& victim = ds.entries[1].object;

  SUBCASE("missing part file") {
    fs::remove(dir.path / "parts" / (victim.object_id + "_p0.ply"));
    try {
      read_dataset(dir.path);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(e.subject() == victim.object_id);
    }
  }
  SUBCASE("point count differs from the header") {
    const auto file = dir.path / "parts" / (victim.object_id + "_p0.ply");
    std::ifstream in(file);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    text = text.substr(0, text.rfind('\n', text.size() - 2) + 1);  // drop the last vertex line
    std::ofstream(file, std::ios::trunc) << text;
    try {
      read_dataset(dir.path);
      FAIL("expected a load error");
    } catch (const LoadError& e) {
      CHECK(e.subject() == victim.object_id);
    }
  }
  SUBCASE("missing manifest") {
    fs::remove(dir.path / "manifest.json");
    CHECK_THROWS_AS(read_dataset(dir.path), LoadError);
  }
  SUBCASE("corrupt manifest") {
    std::ofstream(dir.path / "manifest.json", std::ios::trunc) << "{ not json";
    CHECK_THROWS_AS(read_dataset(dir.path), LoadError);
  }
}
