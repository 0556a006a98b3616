#include "slotflow/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "slotflow/error.hpp"

namespace slotflow {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'L', 'O', 'T', 'F', 'L', 'O', 'W'};
constexpr std::size_t kHeaderBytes = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);

std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

struct ParsedArchive {
  json index;
  std::string payload;
};

ParsedArchive parse_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("checkpoint", "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw LoadError("checkpoint", path.string() + " is not a checkpoint archive");
  }
  std::uint32_t version = 0;
  std::uint64_t index_len = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  std::memcpy(&index_len, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(index_len));
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint", "format version " + std::to_string(version) + ", expected " +
                                      std::to_string(kCheckpointVersion));
  }
  if (index_len > bytes.size() - kHeaderBytes) throw LoadError("checkpoint", "index truncated");
  ParsedArchive a;
  try {
    a.index = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes),
                          bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + index_len));
  } catch (const json::exception& e) {
    throw LoadError("checkpoint", std::string("malformed index: ") + e.what());
  }
  a.payload = bytes.substr(kHeaderBytes + index_len);
  return a;
}

CheckpointMeta restore_from(const ParsedArchive& a, Model& model) {
  std::map<std::string, const json*> entries;
  try {
    for (const auto& t : a.index.at("tensors")) entries[t.at("name").get<std::string>()] = &t;
  } catch (const json::exception& e) {
    throw LoadError("checkpoint", std::string("malformed tensor table: ") + e.what());
  }

  // Validate everything before touching the model.
  struct Pending {
    Parameter<Real>* param;
    std::size_t offset;
  };
  std::vector<Pending> pending;
  for (auto* p : model.parameters()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw LoadError(p->name, "tensor missing from checkpoint");
    const json& e = *it->second;
    std::vector<Index> shape;
    std::uint64_t offset = 0, len = 0;
    try {
      if (e.at("dtype").get<std::string>() != "f32") throw LoadError(p->name, "unsupported dtype");
      shape = e.at("shape").get<std::vector<Index>>();
      offset = e.at("byte_offset").get<std::uint64_t>();
      len = e.at("byte_len").get<std::uint64_t>();
    } catch (const json::exception& ex) {
      throw LoadError(p->name, std::string("malformed entry: ") + ex.what());
    }
    if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols()) {
      std::string got = "[";
      for (std::size_t i = 0; i < shape.size(); ++i) got += (i ? ", " : "") + std::to_string(shape[i]);
      throw LoadError(p->name, "shape mismatch: checkpoint has " + got + "], model expects " +
                                   shape_string(p->value.rows(), p->value.cols()));
    }
    const auto expected = static_cast<std::uint64_t>(p->value.size()) * sizeof(float);
    if (len != expected) {
      throw LoadError(p->name, "byte length " + std::to_string(len) + " does not match shape (" +
                                   std::to_string(expected) + " bytes)");
    }
    if (offset > a.payload.size() || len > a.payload.size() - offset) {
      throw LoadError(p->name, "payload truncated");
    }
    pending.push_back({p, static_cast<std::size_t>(offset)});
  }

  for (const auto& pd : pending) {
    std::memcpy(pd.param->value.data(), a.payload.data() + pd.offset,
                static_cast<std::size_t>(pd.param->value.size()) * sizeof(float));
    pd.param->zero_grad();
  }
  CheckpointMeta meta;
  meta.stages_completed = a.index.value("stages_completed", std::vector<int>{});
  meta.step = a.index.value("step", std::int64_t{0});
  model.fixed_count = a.index.value("fixed_count", model.fixed_count);
  return meta;
}

}  // namespace

bool CheckpointMeta::has_stage(int s) const {
  return std::find(stages_completed.begin(), stages_completed.end(), s) != stages_completed.end();
}

void CheckpointMeta::mark_stage(int s) {
  if (!has_stage(s)) stages_completed.push_back(s);
  std::sort(stages_completed.begin(), stages_completed.end());
}

void save_checkpoint(const std::filesystem::path& path, Model& model, const CheckpointMeta& meta) {
  json index;
  index["format_version"] = kCheckpointVersion;
  index["stages_completed"] = meta.stages_completed;
  index["step"] = meta.step;
  index["fixed_count"] = model.fixed_count;
  index["config"] = to_json(model.config);
  index["tensors"] = json::array();
  std::string payload;
  for (const auto* p : model.parameters()) {
    const std::size_t len = static_cast<std::size_t>(p->value.size()) * sizeof(float);
    index["tensors"].push_back({{"name", p->name},
                                {"dtype", "f32"},
                                {"shape", {p->value.rows(), p->value.cols()}},
                                {"byte_offset", payload.size()},
                                {"byte_len", len}});
    payload.append(reinterpret_cast<const char*>(p->value.data()), len);
  }
  const std::string idx = index.dump();
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t idx_len = idx.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Argument, "cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&idx_len), sizeof(idx_len));
    out.write(idx.data(), static_cast<std::streamsize>(idx.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error(ErrorKind::Argument, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  ParsedArchive a = parse_archive(path);
  TrainConfig cfg;
  try {
    cfg = config_from_json(a.index.at("config"));
  } catch (const json::exception& e) {
    throw LoadError("checkpoint", std::string("missing config snapshot: ") + e.what());
  }
  LoadedCheckpoint out{Model(cfg), {}};
  out.meta = restore_from(a, out.model);
  return out;
}

CheckpointMeta restore_checkpoint(const std::filesystem::path& path, Model& model) {
  return restore_from(parse_archive(path), model);
}

}  // namespace slotflow
