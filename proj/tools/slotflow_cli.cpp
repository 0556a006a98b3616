// slotflow command-line entry point.
//
// Exit codes:
//   0 success
//   1 unexpected failure
//   2 usage error (unknown subcommand, bad flags)
//   3 invalid configuration
//   4 missing or unreadable checkpoint
//   5 missing or unreadable dataset
//   6 training diverged (last good checkpoint written)
//   7 stage order violated
//
// Failures print one JSON line {"error": <kind>, "code": <n>, "message": ...} to stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "slotflow/checkpoint.hpp"
#include "slotflow/error.hpp"
#include "slotflow/evaluate.hpp"
#include "slotflow/synth_data.hpp"
#include "slotflow/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace slotflow;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kCheckpoint = 4,
  kDataset = 5,
  kDiverged = 6,
  kStageOrder = 7,
};

struct Failure {
  int code;
  std::string kind;
  std::string message;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string data;
  std::string checkpoint;
  std::string stage = "all";
  bool disable_gate = false;
  bool disable_bank = false;
  bool disable_warmup = false;
  std::optional<int> steps;
  std::optional<double> tau;
  int jobs = 1;
  bool oracle = false;
  std::vector<std::string> images;
};

TrainConfig resolve_config(const Options& o) {
  TrainConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  cfg.disable_gate = cfg.disable_gate || o.disable_gate;
  cfg.disable_bank = cfg.disable_bank || o.disable_bank;
  cfg.disable_warmup = cfg.disable_warmup || o.disable_warmup;
  if (o.steps) cfg.sampler_steps = *o.steps;
  if (o.tau) cfg.tau = *o.tau;
  validate(cfg);
  return cfg;
}

Dataset open_split(const Options& o, const std::string& split) {
  if (o.data.empty()) throw Failure{kDataset, "dataset", "--data is required"};
  const fs::path dir = fs::path(o.data) / split;
  try {
    return read_dataset(dir);
  } catch (const LoadError& e) {
    throw Failure{kDataset, "dataset", e.what()};
  }
}

LoadedCheckpoint open_checkpoint(const std::string& path) {
  if (path.empty()) throw Failure{kCheckpoint, "checkpoint", "--checkpoint is required"};
  try {
    return load_checkpoint(path);
  } catch (const LoadError& e) {
    throw Failure{kCheckpoint, "checkpoint", e.what()};
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Failure{kFailure, "io", "cannot write " + path.string()};
}

EvalOptions eval_options(const Options& o, const TrainConfig& cfg) {
  EvalOptions e;
  e.steps = o.steps.value_or(cfg.sampler_steps);
  e.tau = o.tau.value_or(cfg.tau);
  e.seed = o.seed.value_or(cfg.seed);
  e.jobs = o.jobs;
  e.oracle_passthrough = o.oracle;
  return e;
}

void cmd_gen_data(const Options& o) {
  const TrainConfig cfg = resolve_config(o);
  const auto spec = cfg.generator_spec();
  const fs::path out(o.out);
  write_dataset(build_dataset(spec, cfg.train_objects, 2 * cfg.seed, cfg.render_size, cfg.iou_cap, o.jobs), out / "train");
  write_dataset(build_dataset(spec, cfg.heldout_objects, 2 * cfg.seed + 1, cfg.render_size, cfg.iou_cap, o.jobs),
                out / "heldout");
  save_config(cfg, out / "config.json");
}

void cmd_train(const Options& o) {
  int stage = -1;
  if (o.stage == "0" || o.stage == "1" || o.stage == "2") {
    stage = o.stage[0] - '0';
  } else if (o.stage != "all") {
    throw Failure{kUsage, "usage", "--stage must be 0, 1, 2 or all"};
  }
  const Dataset ds = open_split(o, "train");
  const fs::path out(o.out);
  fs::create_directories(out);

  std::optional<LoadedCheckpoint> loaded;
  if (stage == 1 || stage == 2) {
    loaded.emplace(open_checkpoint(o.checkpoint.empty() ? (out / "checkpoint.bin").string() : o.checkpoint));
    auto& cfg = loaded->model.config;
    cfg.disable_gate = cfg.disable_gate || o.disable_gate;
    cfg.disable_bank = cfg.disable_bank || o.disable_bank;
    cfg.disable_warmup = cfg.disable_warmup || o.disable_warmup;
    if (o.seed) cfg.seed = *o.seed;
  } else {
    loaded.emplace(LoadedCheckpoint{Model(resolve_config(o)), {}});
  }
  Model& model = loaded->model;
  CheckpointMeta& meta = loaded->meta;
  save_config(model.config, out / "config.json");

  std::ofstream log_file(out / "train_log.jsonl", std::ios::app);
  TrainLog log(&log_file);
  try {
    train(model, meta, ds, log, stage);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Divergence) save_checkpoint(out / "checkpoint.bin", model, meta);
    throw;
  }
  save_checkpoint(out / "checkpoint.bin", model, meta);
}

void cmd_sample(const Options& o) {
  LoadedCheckpoint ck = open_checkpoint(o.checkpoint);
  Model& model = ck.model;
  std::vector<std::pair<std::string, ConditionImage>> inputs;
  for (const auto& path : o.images) {
    try {
      inputs.emplace_back(fs::path(path).stem().string(), read_pgm(path, path));
    } catch (const LoadError& e) {
      throw Failure{kDataset, "dataset", e.what()};
    }
  }
  if (!o.data.empty()) {
    for (auto& e : open_split(o, "heldout").entries) inputs.emplace_back(e.object.object_id, std::move(e.image));
  }
  if (inputs.empty()) throw Failure{kUsage, "usage", "sample needs --image or --data"};

  const EvalOptions eo = eval_options(o, model.config);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& [id, img] = inputs[i];
    const std::uint64_t seed = object_seed(eo.seed, i);
    Generation g = model.generate(img, {eo.steps, seed, eo.tau});
    const fs::path dir = fs::path(o.out) / id;
    fs::create_directories(dir);
    for (std::size_t p = 0; p < g.parts.size(); ++p) {
      write_ply(dir / ("part_" + std::to_string(p) + ".ply"), g.parts[p].points, g.parts[p].type_id);
    }
    write_json(dir / "record.json", {{"object_id", id}, {"active_slots", g.active}, {"alpha", g.alpha}, {"seed", seed}});
  }
}

void cmd_eval(const Options& o) {
  const Dataset heldout = open_split(o, "heldout");
  std::optional<LoadedCheckpoint> ck;
  TrainConfig cfg;
  if (o.oracle && o.checkpoint.empty()) {
    cfg = resolve_config(o);
    ck.emplace(LoadedCheckpoint{Model(cfg), {}});
  } else {
    ck.emplace(open_checkpoint(o.checkpoint));
    cfg = ck->model.config;
  }
  const EvalResult r = evaluate(ck->model, heldout, eval_options(o, cfg));
  fs::create_directories(o.out);
  write_json(fs::path(o.out) / "metrics.json", to_json(r));
  std::cout << to_json(r.report).dump() << '\n';
}

void cmd_ablate(const Options& o) {
  const Dataset train_set = open_split(o, "train");
  const Dataset heldout = open_split(o, "heldout");
  const fs::path out(o.out);
  fs::create_directories(out);
  std::ofstream log_file(out / "train_log.jsonl", std::ios::app);
  TrainLog log(&log_file);

  std::optional<LoadedCheckpoint> base;
  if (!o.checkpoint.empty()) {
    base.emplace(open_checkpoint(o.checkpoint));
  } else {
    base.emplace(LoadedCheckpoint{Model(resolve_config(o)), {}});
    stage0_train_codec(base->model, base->meta, train_set, log);
    save_checkpoint(out / "stage0.bin", base->model, base->meta);
  }
  const auto rows = run_ablation(base->model, base->meta, train_set, heldout, eval_options(o, base->model.config), &log);
  write_json(out / "ablation.json", to_json(rows));
  const std::string table = ablation_table(rows);
  std::ofstream(out / "ablation.md") << table;
  std::cout << table;
}

void cmd_inspect_gates(const Options& o) {
  LoadedCheckpoint ck = open_checkpoint(o.checkpoint);
  const Dataset heldout = open_split(o, "heldout");
  const double tau = o.tau.value_or(ck.model.config.tau);
  fs::create_directories(o.out);
  std::ofstream lines(fs::path(o.out) / "gates.jsonl");
  for (const auto& e : heldout.entries) {
    const auto alpha = ck.model.gate_probabilities(e.image);
    const auto active = ck.model.active_slots(alpha, tau);
    const SlotMask m = canonical_mask(ck.model.config.p_max, e.object.n_obj);
    const json row = {{"object_id", e.object.object_id}, {"alpha", alpha},     {"active_slots", active},
                      {"mask", std::vector<int>(m.begin(), m.end())},  {"n_obj", e.object.n_obj}, {"tau", tau}};
    std::cout << row.dump() << '\n';
    lines << row.dump() << '\n';
  }
}

void cmd_export_prototypes(const Options& o) {
  LoadedCheckpoint ck = open_checkpoint(o.checkpoint);
  Model& m = ck.model;
  const Mat<double> protos = m.bank.prototypes.value.cast<double>();
  json j;
  j["prototypes"] = json::array();
  for (Index k = 0; k < protos.rows(); ++k) {
    j["prototypes"].push_back(std::vector<double>(protos.row(k).data(), protos.row(k).data() + protos.cols()));
  }
  j["assignments"] = json::array();
  if (!o.data.empty()) {
    const Dataset ds = open_split(o, "heldout");
    const LatentCache cache = encode_dataset(m, ds);
    const Index p = m.config.p_max;
    for (Index i = 0; i < cache.objects(); ++i) {
      const auto& obj = ds.entries[static_cast<std::size_t>(i)].object;
      const Mat<double> w = assign(Mat<double>(cache.summaries.middleRows(i * p, obj.n_obj).cast<double>()), protos);
      json slots = json::array();
      for (Index s = 0; s < w.rows(); ++s) {
        slots.push_back({{"slot", s},
                         {"type_id", obj.parts[static_cast<std::size_t>(s)].type_id},
                         {"weights", std::vector<double>(w.row(s).data(), w.row(s).data() + w.cols())}});
      }
      j["assignments"].push_back({{"object_id", obj.object_id}, {"category_tag", obj.category_tag}, {"slots", slots}});
    }
  }
  fs::create_directories(o.out);
  write_json(fs::path(o.out) / "prototypes.json", j);
}

int report(const Failure& f) {
  std::cerr << json{{"error", f.kind}, {"code", f.code}, {"message", f.message}}.dump() << '\n';
  return f.code;
}

Failure classify(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Config: return {kConfig, "config", e.what()};
    case ErrorKind::Load: return {kFailure, "load", e.what()};
    case ErrorKind::Divergence: return {kDiverged, "divergence", e.what()};
    case ErrorKind::Stage: return {kStageOrder, "stage", e.what()};
    case ErrorKind::Argument: return {kUsage, "argument", e.what()};
    case ErrorKind::Capacity: return {kConfig, "capacity", e.what()};
  }
  return {kFailure, "unknown", e.what()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Part-aware image-to-3D generation with slot gating and a prototype bank"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file");
    sub->add_option("--seed", o.seed, "Run seed (overrides the config)");
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--jobs", o.jobs, "Worker threads for data generation and eval")->check(CLI::PositiveNumber);
  };
  auto flags = [&](CLI::App* sub) {
    sub->add_flag("--disable-gate", o.disable_gate, "Train and infer without slot gating");
    sub->add_flag("--disable-bank", o.disable_bank, "Train and infer without the prototype bank");
    sub->add_flag("--disable-warmup", o.disable_warmup, "Skip the warm-up stage");
  };
  auto sampling = [&](CLI::App* sub) {
    sub->add_option("--steps", o.steps, "Euler sampler steps")->check(CLI::PositiveNumber);
    sub->add_option("--tau", o.tau, "Gate threshold");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/heldout datasets");
  common(gen);
  auto* tr = app.add_subcommand("train", "Run training stages");
  common(tr);
  flags(tr);
  tr->add_option("--data", o.data, "Dataset directory (from gen-data)");
  tr->add_option("--stage", o.stage, "0, 1, 2 or all")->capture_default_str();
  tr->add_option("--checkpoint", o.checkpoint, "Input checkpoint for stages 1 and 2");
  auto* sm = app.add_subcommand("sample", "Generate parts for condition images");
  common(sm);
  sampling(sm);
  sm->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  sm->add_option("--image", o.images, "PGM condition image (repeatable)");
  sm->add_option("--data", o.data, "Dataset directory; samples every held-out image");
  auto* ev = app.add_subcommand("eval", "Score held-out generations");
  common(ev);
  sampling(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  ev->add_option("--data", o.data, "Dataset directory");
  ev->add_flag("--oracle-passthrough", o.oracle, "Score ground-truth parts as predictions");
  auto* ab = app.add_subcommand("ablate", "Run the four-setting component ablation");
  common(ab);
  sampling(ab);
  ab->add_option("--data", o.data, "Dataset directory");
  ab->add_option("--checkpoint", o.checkpoint, "Shared stage-0 checkpoint (trained if omitted)");
  auto* ig = app.add_subcommand("inspect-gates", "Dump gate probabilities for held-out images");
  common(ig);
  sampling(ig);
  ig->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  ig->add_option("--data", o.data, "Dataset directory");
  auto* ep = app.add_subcommand("export-prototypes", "Dump prototypes and per-slot assignments");
  common(ep);
  ep->add_option("--checkpoint", o.checkpoint, "Trained checkpoint");
  ep->add_option("--data", o.data, "Dataset directory (optional, for assignments)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    return report({kUsage, "usage", e.what()});
  }

  try {
    if (*gen) cmd_gen_data(o);
    else if (*tr) cmd_train(o);
    else if (*sm) cmd_sample(o);
    else if (*ev) cmd_eval(o);
    else if (*ab) cmd_ablate(o);
    else if (*ig) cmd_inspect_gates(o);
    else if (*ep) cmd_export_prototypes(o);
    return kOk;
  } catch (const Failure& f) {
    return report(f);
  } catch (const Error& e) {
    return report(classify(e));
  } catch (const std::exception& e) {
    return report({kFailure, "internal", e.what()});
  }
}
