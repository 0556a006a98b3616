#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "slotflow/error.hpp"
#include "slotflow/synth_data.hpp"

namespace slotflow {


namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool parse_float(std::string_view tok, float& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Argument, "cannot write " + path.string());
  return os;
}

}  // namespace

void write_ply(const fs::path& path, const PointsF& points, int type_id) {
  auto os = open_out(path);
  os << "ply\nformat ascii 1.0\ncomment type_id " << type_id << "\nelement vertex " << points.rows()
     << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (Index i = 0; i < points.rows(); ++i) {
    os << format_float(points(i, 0)) << ' ' << format_float(points(i, 1)) << ' '
       << format_float(points(i, 2)) << '\n';
  }
}

PointsF read_ply(const fs::path& path, const std::string& subject) {
  std::ifstream is(path);
  if (!is) throw LoadError(subject, "missing part file " + path.string());
  std::string line;
  long long declared = -1;
  int properties = 0;
  bool header_done = false;
  if (!std::getline(is, line) || line != "ply") throw LoadError(subject, "not a PLY file: " + path.string());
  while (std::getline(is, line)) {
    if (line == "end_header") {
      header_done = true;
      break;
    }
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string kind;
      ls >> kind;
      if (kind != "ascii") throw LoadError(subject, "unsupported PLY format " + kind);
    } else if (word == "element") {
      std::string name;
      ls >> name >> declared;
      if (name != "vertex") throw LoadError(subject, "unexpected PLY element " + name);
    } else if (word == "property") {
      ++properties;
    }
  }
  if (!header_done || declared < 0 || properties != 3) {
    throw LoadError(subject, "malformed PLY header in " + path.string());
  }
  PointsF pts(declared, 3);
  Index row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (row >= declared) throw LoadError(subject, "point count exceeds header in " + path.string());
    std::istringstream ls(line);
    std::string tok;
    for (int a = 0; a < 3; ++a) {
      if (!(ls >> tok) || !parse_float(tok, pts(row, a))) {
        throw LoadError(subject, "bad coordinate in " + path.string());
      }
    }
    ++row;
  }
  if (row != declared) {
    throw LoadError(subject, "point count " + std::to_string(row) + " does not match header " +
                                 std::to_string(declared) + " in " + path.string());
  }
  return pts;
}

void write_pgm(const fs::path& path, const ConditionImage& img) {
  auto os = open_out(path);
  os << "P2\n" << img.size << ' ' << img.size << "\n255\n";
  for (int r = 0; r < img.size; ++r) {
    for (int c = 0; c < img.size; ++c) {
      const int v = static_cast<int>(std::lround(std::clamp(img.at(r, c), 0.0f, 1.0f) * 255.0f));
      os << v << (c + 1 == img.size ? '\n' : ' ');
    }
  }
}

ConditionImage read_pgm(const fs::path& path, const std::string& subject) {
  std::ifstream is(path);
  if (!is) throw LoadError(subject, "missing image file " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  if (!(is >> magic >> w >> h >> maxval) || magic != "P2" || w != h || w < 1 || maxval < 1) {
    throw LoadError(subject, "malformed PGM header in " + path.string());
  }
  ConditionImage img;
  img.size = w;
  img.pixels.resize(static_cast<std::size_t>(w * h));
  for (auto& p : img.pixels) {
    int v = 0;
    if (!(is >> v)) throw LoadError(subject, "truncated PGM " + path.string());
    p = static_cast<float>(v) / static_cast<float>(maxval);
  }
  return img;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "parts");
  fs::create_directories(dir / "images");
  json objects = json::array();
  for (const auto& e : ds.entries) {
    const auto& obj = e.object;
    json part_files = json::array();
    json type_ids = json::array();
    for (const auto& part : obj.parts) {
      const std::string rel = "parts/" + obj.object_id + "_p" + std::to_string(part.part_index) + ".ply";
      write_ply(dir / rel, part.points, part.type_id);
      part_files.push_back(rel);
      type_ids.push_back(part.type_id);
    }
    const std::string img_rel = "images/" + obj.object_id + ".pgm";
    write_pgm(dir / img_rel, e.image);
    objects.push_back({{"object_id", obj.object_id},
                       {"n_obj", obj.n_obj},
                       {"category_tag", obj.category_tag},
                       {"part_files", part_files},
                       {"type_ids", type_ids},
                       {"image_file", img_rel}});
  }
  json manifest = {{"format_version", kManifestVersion},
                   {"points_per_part", ds.points_per_part},
                   {"render_size", ds.render_size},
                   {"objects", objects}};
  auto os = open_out(dir / "manifest.json");
  os << manifest.dump(1) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw LoadError("manifest", "missing " + mpath.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw LoadError("manifest", std::string("corrupt manifest: ") + e.what());
  }
  Dataset ds;
  try {
    if (manifest.at("format_version").get<int>() != kManifestVersion) {
      throw LoadError("manifest", "unsupported format_version");
    }
    ds.points_per_part = manifest.at("points_per_part").get<int>();
    ds.render_size = manifest.at("render_size").get<int>();
    for (const auto& o : manifest.at("objects")) {
      DatasetEntry e;
      auto& obj = e.object;
      obj.object_id = o.at("object_id").get<std::string>();
      obj.n_obj = o.at("n_obj").get<int>();
      obj.category_tag = o.at("category_tag").get<std::string>();
      const auto files = o.at("part_files").get<std::vector<std::string>>();
      const auto types = o.at("type_ids").get<std::vector<int>>();
      if (files.size() != types.size() || static_cast<int>(files.size()) != obj.n_obj) {
        throw LoadError(obj.object_id, "n_obj, part_files and type_ids disagree");
      }
      for (std::size_t i = 0; i < files.size(); ++i) {
        PartPointCloud part;
        part.points = read_ply(dir / files[i], obj.object_id);
        if (part.points.rows() != ds.points_per_part) {
          throw LoadError(obj.object_id, "part " + std::to_string(i) + " has " +
                                             std::to_string(part.points.rows()) + " points, manifest says " +
                                             std::to_string(ds.points_per_part));
        }
        part.type_id = types[i];
        part.part_index = static_cast<int>(i);
        obj.parts.push_back(std::move(part));
      }
      e.image = read_pgm(dir / o.at("image_file").get<std::string>(), obj.object_id);
      if (e.image.size != ds.render_size) throw LoadError(obj.object_id, "image size differs from manifest");
      ds.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw LoadError("manifest", std::string("corrupt manifest: ") + ex.what());
  }
  return ds;
}

}  // namespace slotflow
