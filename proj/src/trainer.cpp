#include "slotflow/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "slotflow/error.hpp"

namespace slotflow {

void TrainLog::record(int stage, int epoch, const std::map<std::string, double>& terms) {
  history.push_back({stage, epoch, terms});
  if (!out_) return;
  for (const auto& [term, value] : terms) {
    nlohmann::json j = {{"stage", stage}, {"epoch", epoch}, {"term", term}, {"value", value}};
    *out_ << j.dump() << '\n';
  }
  out_->flush();
}

std::vector<double> TrainLog::series(int stage, const std::string& term) const {
  std::vector<double> out;
  for (const auto& r : history) {
    if (r.stage != stage) continue;
    if (auto it = r.terms.find(term); it != r.terms.end()) out.push_back(it->second);
  }
  return out;
}

namespace {

// Moves each flattened silhouette by an independent random offset in
// [-max, max]^2, filling uncovered pixels with background.
void shift_images(Mat<Real>& imgs, int size, int max, std::mt19937_64& rng) {
  if (max == 0) return;
  std::uniform_int_distribution<int> d(-max, max);
  for (Index i = 0; i < imgs.rows(); ++i) {
    const int dr = d(rng), dc = d(rng);
    Mat<Real> out = Mat<Real>::Zero(1, imgs.cols());
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const int sr = r - dr, sc = c - dc;
        if (sr < 0 || sr >= size || sc < 0 || sc >= size) continue;
        out(0, r * size + c) = imgs(i, sr * size + sc);
      }
    }
    imgs.row(i) = out;
  }
}

void require_nonempty(const Dataset& ds) {
  if (ds.entries.empty()) throw argument_error("training requires a nonempty dataset");
}

void set_frozen(const ParamList<Real>& params, bool frozen) {
  for (auto* p : params) p->frozen = frozen;
}

/// Parameter values saved at the start of an epoch, restored if a step diverges.
class Snapshot {
 public:
  explicit Snapshot(Model& m) : params_(m.parameters()) { take(); }
  void take() {
    values_.clear();
    for (auto* p : params_) values_.push_back(p->value);
  }
  void restore() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i]->value = values_[i];
      params_[i]->zero_grad();
    }
  }

 private:
  ParamList<Real> params_;
  std::vector<Mat<Real>> values_;
};

[[noreturn]] void diverged(Snapshot& snap, int stage, int epoch) {
  snap.restore();
  throw Error(ErrorKind::Divergence, "stage " + std::to_string(stage) + " diverged in epoch " +
                                         std::to_string(epoch) + "; weights reset to the last good epoch");
}

std::vector<std::vector<Index>> make_batches(Index count, Index batch, std::mt19937_64& rng) {
  std::vector<Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> out;
  for (Index s = 0; s < count; s += batch) {
    out.emplace_back(order.begin() + s, order.begin() + std::min(count, s + batch));
  }
  return out;
}

int rounded_mean_count(const Dataset& ds) {
  double sum = 0.0;
  for (const auto& e : ds.entries) sum += e.object.n_obj;
  return static_cast<int>(std::lround(sum / static_cast<double>(ds.entries.size())));
}

Mat<Real> gate_targets(const std::vector<int>& n_obj, const std::vector<Index>& objects, Index p_max) {
  Mat<Real> m = Mat<Real>::Zero(static_cast<Index>(objects.size()), p_max);
  for (std::size_t b = 0; b < objects.size(); ++b) {
    m.row(static_cast<Index>(b)).head(n_obj[static_cast<std::size_t>(objects[b])]).setOnes();
  }
  return m;
}

int count_hits(const Mat<Real>& alpha, const std::vector<int>& truth, double tau) {
  int hits = 0;
  for (Index b = 0; b < alpha.rows(); ++b) {
    std::vector<double> row(alpha.row(b).data(), alpha.row(b).data() + alpha.cols());
    if (static_cast<int>(select_active(row, tau).size()) == truth[static_cast<std::size_t>(b)]) ++hits;
  }
  return hits;
}

struct Accumulator {
  std::map<std::string, double> sums;
  double weight = 0.0;

  void add(const std::string& k, double v, double w) { sums[k] += v * w; }
  std::map<std::string, double> means() const {
    std::map<std::string, double> out;
    for (const auto& [k, v] : sums) out[k] = v / weight;
    return out;
  }
};

}  // namespace

LatentCache encode_dataset(Model& model, const Dataset& ds) {
  const auto& cfg = model.config;
  LatentCache c;
  const Index n = static_cast<Index>(ds.entries.size());
  const Index p = cfg.p_max, k = cfg.tokens_per_part;
  c.slot_rows = p * k;
  c.z0.resize(n * p * k, cfg.latent_dim);
  c.summaries.resize(n * p, cfg.latent_dim);
  std::vector<const ConditionImage*> imgs;
  for (Index o = 0; o < n; ++o) {
    const auto& obj = ds.entries[static_cast<std::size_t>(o)].object;
    imgs.push_back(&ds.entries[static_cast<std::size_t>(o)].image);
    Mat<Real> pts(static_cast<Index>(obj.parts.size()) * cfg.points_per_part, 3);
    for (std::size_t i = 0; i < obj.parts.size(); ++i) {
      if (obj.parts[i].points.rows() != cfg.points_per_part) {
        throw config_error(obj.object_id + ": part has " + std::to_string(obj.parts[i].points.rows()) +
                           " points, config expects " + std::to_string(cfg.points_per_part));
      }
      pts.middleRows(static_cast<Index>(i) * cfg.points_per_part, cfg.points_per_part) = obj.parts[i].points;
    }
    Tape<Real> tape;
    const Index np = static_cast<Index>(obj.parts.size());
    const Mat<Real>& tok = tape.value(model.codec.encode(tape, tape.constant(pts), np));
    std::vector<Mat<Real>> parts;
    for (Index i = 0; i < np; ++i) parts.emplace_back(tok.middleRows(i * k, k));
    PackedSlots<Real> packed = pack_slots(parts, p, model.e_null.value);
    c.z0.middleRows(o * p * k, p * k) = packed.tensor.z;
    c.summaries.middleRows(o * p, p) = slot_summary(packed.tensor);
    c.n_obj.push_back(obj.n_obj);
  }
  c.images = image_rows<Real>(imgs, cfg.render_size);
  return c;
}

void stage0_train_codec(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log) {
  require_nonempty(ds);
  const auto& cfg = model.config;
  const Index n_pts = cfg.points_per_part;
  std::vector<const PartPointCloud*> parts;
  for (const auto& e : ds.entries) {
    for (const auto& p : e.object.parts) parts.push_back(&p);
  }
  ParamList<Real> params = model.codec_parameters();
  set_frozen(params, false);
  Adam<Real> opt(cfg.lr_stage0);
  auto rng = make_rng(cfg.seed, kStreamStage0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Snapshot snap(model);

  for (int epoch = 1; epoch <= cfg.epochs_stage0; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Accumulator acc;
    for (const auto& batch : make_batches(static_cast<Index>(parts.size()), cfg.codec_batch_size, rng)) {
      const Index b = static_cast<Index>(batch.size());
      Mat<Real> pts(b * n_pts, 3);
      for (Index i = 0; i < b; ++i) pts.middleRows(i * n_pts, n_pts) = parts[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])]->points;
      Tape<Real> tape;
      Var x = tape.constant(pts);
      Var z = model.codec.encode(tape, x, b);
      if (cfg.codec_noise > 0.0) {
        Mat<Real> jitter(tape.value(z).rows(), tape.value(z).cols());
        for (Index i = 0; i < jitter.size(); ++i) jitter.data()[i] = static_cast<Real>(cfg.codec_noise * gauss(rng));
        z = tape.add(z, tape.constant(std::move(jitter)));
      }
      Var loss = tape.chamfer(model.codec.decode(tape, z, b), x, b);
      const double v = tape.scalar(loss);
      if (!std::isfinite(v)) diverged(snap, 0, epoch);
      tape.backward(loss);
      opt.step(params, cfg.grad_clip);
      ++meta.step;
      acc.add("chamfer", v, static_cast<double>(b));
      acc.weight += static_cast<double>(b);
    }
    auto terms = acc.means();
    terms["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.record(0, epoch, terms);
    snap.take();
  }
  set_frozen(params, true);
  model.fixed_count = rounded_mean_count(ds);
  meta.mark_stage(0);
}

void stage1_warmup(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log) {
  require_nonempty(ds);
  if (!meta.has_stage(0)) throw Error(ErrorKind::Stage, "stage 1 requires a checkpoint with stage 0 completed");
  const auto& cfg = model.config;
  set_frozen(model.codec_parameters(), true);
  set_frozen(model.backbone_parameters(), true);
  LatentCache cache = encode_dataset(model, ds);

  ParamList<Real> gate_params = model.view_parameters();
  model.gate.collect(gate_params);
  ParamList<Real> bank_params = model.bank_parameters();
  set_frozen(gate_params, cfg.disable_gate);
  set_frozen(bank_params, cfg.disable_bank);
  Adam<Real> opt_gate(cfg.lr_stage1);
  opt_gate.decay(gate_params, cfg.gate_weight_decay);
  Adam<Real> opt_bank(cfg.lr_stage1);
  auto rng = make_rng(cfg.seed, kStreamStage1);
  auto shift_rng = make_rng(cfg.seed, kStreamShift1);
  Snapshot snap(model);
  const Index p = cfg.p_max;

  for (int epoch = 1; epoch <= cfg.epochs_stage1; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Accumulator acc;
    int hits = 0;
    for (const auto& batch : make_batches(cache.objects(), cfg.batch_size, rng)) {
      const Index b = static_cast<Index>(batch.size());
      std::vector<int> n_obj;
      Mat<Real> imgs(b, cache.images.cols());
      Mat<Real> s(b * p, cfg.latent_dim);
      for (Index i = 0; i < b; ++i) {
        const Index o = batch[static_cast<std::size_t>(i)];
        n_obj.push_back(cache.n_obj[static_cast<std::size_t>(o)]);
        imgs.row(i) = cache.images.row(o);
        s.middleRows(i * p, p) = cache.summaries.middleRows(o * p, p);
      }
      const Mat<Real> mask = gate_targets(cache.n_obj, batch, p);
      Tape<Real> tape;
      std::vector<Var> terms;
      if (!cfg.disable_gate) {
        shift_images(imgs, cfg.render_size, cfg.gate_shift, shift_rng);
        Var alpha = model.gate.forward(tape, model.view.forward(tape, tape.constant(imgs)));
        Var ce = loss_ce(tape, alpha, mask);
        Var cnt = loss_count(tape, alpha, n_obj);
        Var lg = tape.add(tape.scale(ce, static_cast<Real>(cfg.lambda_ce)), tape.scale(cnt, static_cast<Real>(cfg.lambda_count)));
        terms.push_back(lg);
        acc.add("gate_ce", tape.scalar(ce), static_cast<double>(b));
        acc.add("gate_count", tape.scalar(cnt), static_cast<double>(b));
        acc.add("gate", tape.scalar(lg), static_cast<double>(b));
        hits += count_hits(tape.value(alpha), n_obj, cfg.tau);
      }
      if (!cfg.disable_bank) {
        const Mat<Real> col = Eigen::Map<const Mat<Real>>(mask.data(), b * p, 1);
        Var sv = tape.constant(s);
        Var w = model.bank.assign(tape, sv);
        Var rec = loss_rec(tape, sv, model.bank.aligned(tape, w), col, b);
        Var ent = loss_ent(tape, w, col, b);
        Var lb = tape.add(rec, tape.scale(ent, static_cast<Real>(cfg.lambda_ent)));
        terms.push_back(lb);
        acc.add("rec", tape.scalar(rec), static_cast<double>(b));
        acc.add("ent", tape.scalar(ent), static_cast<double>(b));
      }
      acc.weight += static_cast<double>(b);
      if (terms.empty()) continue;
      Var total = terms.size() == 1 ? terms[0] : tape.add(terms[0], terms[1]);
      if (!std::isfinite(tape.scalar(total))) diverged(snap, 1, epoch);
      tape.backward(total);
      opt_gate.step(gate_params, cfg.grad_clip);
      opt_bank.step(bank_params, cfg.grad_clip);
      ++meta.step;
    }
    auto terms = acc.means();
    if (!cfg.disable_gate) terms["gate_count_accuracy"] = static_cast<double>(hits) / static_cast<double>(cache.objects());
    terms["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.record(1, epoch, terms);
    snap.take();
  }
  set_frozen(model.backbone_parameters(), false);
  set_frozen(gate_params, false);
  set_frozen(bank_params, false);
  model.fixed_count = rounded_mean_count(ds);
  meta.mark_stage(1);
}

JointLosses joint_losses(Tape<Real>& tape, Model& model, const LatentCache& cache, const JointBatch& jb) {
  const auto& cfg = model.config;
  const Index b = static_cast<Index>(jb.objects.size());
  const Index p = cfg.p_max, k = cfg.tokens_per_part, c = cfg.latent_dim, pk = p * k;
  if (static_cast<Index>(jb.t.size()) != b || jb.eps.rows() != b * pk || jb.eps.cols() != c) {
    throw argument_error("joint_losses: batch shape mismatch");
  }

  Mat<Real> z0(b * pk, c), s(b * p, c), imgs(b, cache.images.cols());
  Mat<Real> zt = Mat<Real>::Zero(b * pk, c);
  Mat<Real> flow_mask = Mat<Real>::Zero(b * pk, c);
  std::vector<int> n_obj;
  for (Index i = 0; i < b; ++i) {
    const Index o = jb.objects[static_cast<std::size_t>(i)];
    const int n = cache.n_obj[static_cast<std::size_t>(o)];
    n_obj.push_back(n);
    z0.middleRows(i * pk, pk) = cache.z0.middleRows(o * pk, pk);
    s.middleRows(i * p, p) = cache.summaries.middleRows(o * p, p);
    imgs.row(i) = cache.images.row(o);
    const Index rows = n * k;
    const Real t = static_cast<Real>(jb.t[static_cast<std::size_t>(i)]);
    zt.middleRows(i * pk, rows) = t * z0.middleRows(i * pk, rows) + (Real(1) - t) * jb.eps.middleRows(i * pk, rows);
    flow_mask.middleRows(i * pk, rows).setOnes();
  }
  const Mat<Real> null_mask = Mat<Real>::Ones(b * pk, c) - flow_mask;
  const Mat<Real> gate_mask = gate_targets(cache.n_obj, jb.objects, p);

  JointLosses out;
  // Null rows carry the frozen e_null; the parameter is detached on the tape.
  Var z_in = tape.add(tape.constant(zt), tape.mul(tape.constant(null_mask), tape.tile_rows(tape.param(model.e_null), b * pk)));
  out.has_bank = !cfg.disable_bank;
  if (out.has_bank) {
    const Mat<Real> col = Eigen::Map<const Mat<Real>>(gate_mask.data(), b * p, 1);
    Var sv = tape.constant(s);
    Var w = model.bank.assign(tape, sv);
    Var st = model.bank.aligned(tape, w);
    out.rec = loss_rec(tape, sv, st, col, b);
    out.ent = loss_ent(tape, w, col, b);
    Var inj = tape.mul(tape.repeat_rows(st, k), tape.constant(flow_mask));
    z_in = tape.add(z_in, tape.scale(inj, static_cast<Real>(cfg.beta)));
  }
  Var feat = model.view.forward(tape, tape.constant(imgs));
  Var v = model.backbone.forward(tape, z_in, jb.t, feat, b);
  out.mflow = loss_mflow(tape, v, Mat<Real>(z0 - jb.eps), flow_mask, b);
  out.all = tape.scale(out.mflow, static_cast<Real>(cfg.lambda_flow));
  if (out.has_bank) {
    out.all = tape.add(out.all, tape.add(out.rec, tape.scale(out.ent, static_cast<Real>(cfg.lambda_ent))));
  }
  out.has_gate = !cfg.disable_gate;
  if (out.has_gate) {
    if (jb.gate_images.rows() != 0 && jb.gate_images.rows() != b) throw argument_error("joint_losses: gate image count");
    Var gate_feat = jb.gate_images.rows() == 0 ? feat : model.view.forward(tape, tape.constant(jb.gate_images));
    Var alpha = model.gate.forward(tape, gate_feat);
    out.gate = loss_gate(tape, alpha, gate_mask, n_obj, cfg.lambda_ce, cfg.lambda_count);
  }
  return out;
}

void stage2_joint(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log) {
  require_nonempty(ds);
  const auto& cfg = model.config;
  if (!meta.has_stage(0)) throw Error(ErrorKind::Stage, "stage 2 requires a checkpoint with stage 0 completed");
  if (!cfg.disable_warmup && !meta.has_stage(1)) {
    throw Error(ErrorKind::Stage, "stage 2 requires stage 1 unless disable_warmup is set");
  }
  set_frozen(model.codec_parameters(), true);
  LatentCache cache = encode_dataset(model, ds);

  ParamList<Real> params = model.backbone_parameters();
  set_frozen(params, false);
  if (cfg.freeze_first_half) {
    ParamList<Real> first;
    model.backbone.collect_first_half(first);
    set_frozen(first, true);
  }
  for (auto* q : model.view_parameters()) params.push_back(q);
  if (!cfg.disable_gate) {
    for (auto* q : model.gate_parameters()) params.push_back(q);
  }
  if (!cfg.disable_bank) {
    for (auto* q : model.bank_parameters()) params.push_back(q);
  }
  Adam<Real> opt(cfg.lr_stage2);
  opt.decay(model.view_parameters(), cfg.gate_weight_decay);
  opt.decay(model.gate_parameters(), cfg.gate_weight_decay);
  auto rng = make_rng(cfg.seed, kStreamStage2);
  auto shift_rng = make_rng(cfg.seed, kStreamShift2);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Snapshot snap(model);
  const Index pk = cfg.p_max * cfg.tokens_per_part;

  for (int epoch = 1; epoch <= cfg.epochs_stage2; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Accumulator acc;
    for (const auto& batch : make_batches(cache.objects(), cfg.batch_size, rng)) {
      JointBatch jb;
      jb.objects = batch;
      const Index b = static_cast<Index>(batch.size());
      for (Index i = 0; i < b; ++i) jb.t.push_back(uni(rng));
      jb.eps.resize(b * pk, cfg.latent_dim);
      for (Index i = 0; i < jb.eps.size(); ++i) jb.eps.data()[i] = static_cast<Real>(gauss(rng));
      if (cfg.gate_shift > 0 && !cfg.disable_gate) {
        jb.gate_images.resize(b, cache.images.cols());
        for (Index i = 0; i < b; ++i) jb.gate_images.row(i) = cache.images.row(batch[static_cast<std::size_t>(i)]);
        shift_images(jb.gate_images, cfg.render_size, cfg.gate_shift, shift_rng);
      }

      Tape<Real> tape;
      JointLosses l = joint_losses(tape, model, cache, jb);
      Var total = l.has_gate ? tape.add(l.all, l.gate) : l.all;
      if (!std::isfinite(tape.scalar(total))) diverged(snap, 2, epoch);
      const double w = static_cast<double>(b);
      acc.add("mflow", tape.scalar(l.mflow), w);
      acc.add("all", tape.scalar(l.all), w);
      if (l.has_bank) {
        acc.add("rec", tape.scalar(l.rec), w);
        acc.add("ent", tape.scalar(l.ent), w);
      }
      if (l.has_gate) acc.add("gate", tape.scalar(l.gate), w);
      acc.weight += w;
      tape.backward(total);
      opt.step(params, cfg.grad_clip);
      ++meta.step;
    }
    auto terms = acc.means();
    terms["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.record(2, epoch, terms);
    snap.take();
  }
  set_frozen(params, false);
  meta.mark_stage(2);
}

void train(Model& model, CheckpointMeta& meta, const Dataset& ds, TrainLog& log, int stage) {
  if (stage < -1 || stage > 2) throw argument_error("stage must be 0, 1, 2 or -1 for all");
  if (stage == -1 || stage == 0) stage0_train_codec(model, meta, ds, log);
  if ((stage == -1 && !model.config.disable_warmup) || stage == 1) stage1_warmup(model, meta, ds, log);
  if (stage == -1 || stage == 2) stage2_joint(model, meta, ds, log);
}

}  // namespace slotflow
