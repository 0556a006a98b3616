#include "slotflow/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "slotflow/error.hpp"

namespace slotflow {

std::uint64_t object_seed(std::uint64_t seed, std::size_t i) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) * 2654435761ULL + 1;
}

namespace {

ObjectEval score_object(Model& model, const DatasetEntry& e, std::size_t i, const EvalOptions& opt) {
  ObjectEval r;
  r.object_id = e.object.object_id;
  r.n_true = e.object.n_obj;
  std::vector<PartPointCloud> parts;
  if (opt.oracle_passthrough) {
    parts = e.object.parts;
  } else {
    parts = model.generate(e.image, {opt.steps, object_seed(opt.seed, i), opt.tau}).parts;
  }
  r.n_pred = static_cast<int>(parts.size());
  const Points pred = assemble(parts);
  const Points gt = assemble(e.object.parts);
  r.chamfer_l2 = chamfer_l2(pred, gt);
  r.fscore = fscore(pred, gt, 0.1);
  r.pair_iou = mean_pairwise_iou(parts);
  return r;
}

}  // namespace

EvalResult evaluate(Model& model, const Dataset& heldout, const EvalOptions& opt) {
  if (heldout.entries.empty()) throw argument_error("evaluation requires a nonempty dataset");
  if (opt.steps < 1) throw argument_error("steps must be >= 1");
  if (opt.jobs < 1) throw argument_error("jobs must be >= 1");
  EvalResult out;
  out.objects.resize(heldout.entries.size());
  auto work = [&](std::size_t first) {
    for (std::size_t i = first; i < heldout.entries.size(); i += static_cast<std::size_t>(opt.jobs)) {
      out.objects[i] = score_object(model, heldout.entries[i], i, opt);
    }
  };
  if (opt.jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < opt.jobs; ++j) pool.emplace_back(work, static_cast<std::size_t>(j));
    for (auto& th : pool) th.join();
  }

  auto& rep = out.report;
  rep.objects = static_cast<int>(out.objects.size());
  int hits = 0;
  for (const auto& o : out.objects) {
    rep.chamfer_l2 += o.chamfer_l2;
    rep.fscore += o.fscore;
    rep.mean_pair_iou += o.pair_iou;
    rep.gate_count_mae += std::abs(o.n_pred - o.n_true);
    if (o.n_pred == o.n_true) ++hits;
  }
  const double n = static_cast<double>(rep.objects);
  rep.chamfer_l2 /= n;
  rep.fscore /= n;
  rep.mean_pair_iou /= n;
  rep.gate_count_mae /= n;
  rep.gate_count_accuracy = static_cast<double>(hits) / n;
  return out;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json j = to_json(r.report);
  j["per_object"] = nlohmann::json::array();
  for (const auto& o : r.objects) {
    j["per_object"].push_back({{"object_id", o.object_id},
                               {"n_true", o.n_true},
                               {"n_pred", o.n_pred},
                               {"chamfer_l2", o.chamfer_l2},
                               {"fscore", o.fscore},
                               {"pair_iou", o.pair_iou}});
  }
  return j;
}

std::vector<AblationRow> ablation_grid() {
  return {
      {"w/o slot gating", false, true, true, {}},
      {"w/o prototype bank", true, false, true, {}},
      {"w/o warm-up", true, true, false, {}},
      {"full", true, true, true, {}},
  };
}

std::vector<AblationRow> run_ablation(const Model& stage0, const CheckpointMeta& meta, const Dataset& train,
                                      const Dataset& heldout, const EvalOptions& opt, TrainLog* log,
                                      const MetricsReport* full) {
  if (!meta.has_stage(0)) throw Error(ErrorKind::Stage, "ablation requires a stage-0 model");
  TrainLog scratch;
  TrainLog& sink = log ? *log : scratch;
  auto rows = ablation_grid();
  for (auto& row : rows) {
    if (full && row.asg && row.pb && row.warmup) {
      row.report = *full;
      continue;
    }
    Model m = stage0;
    m.config.disable_gate = !row.asg;
    m.config.disable_bank = !row.pb;
    m.config.disable_warmup = !row.warmup;
    CheckpointMeta mm;
    mm.mark_stage(0);
    if (row.warmup) stage1_warmup(m, mm, train, sink);
    stage2_joint(m, mm, train, sink);
    row.report = evaluate(m, heldout, opt).report;
  }
  return rows;
}

nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"setting", r.setting}, {"asg", r.asg}, {"pb", r.pb}, {"warmup", r.warmup}, {"metrics", to_json(r.report)}});
  }
  return j;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| ASG | PB | Warm-up | IoU | F-Score | CD | gate acc |\n";
  os << "|---|---|---|---|---|---|---|\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %s | %s | %.4f | %.4f | %.4f | %.3f |\n", r.asg ? "x" : " ",
                  r.pb ? "x" : " ", r.warmup ? "x" : " ", r.report.mean_pair_iou, r.report.fscore,
                  r.report.chamfer_l2, r.report.gate_count_accuracy);
    os << buf;
  }
  return os.str();
}

}  // namespace slotflow
