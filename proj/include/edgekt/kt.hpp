#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "edgekt/model.hpp"
#include "edgekt/train.hpp"

namespace edgekt {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class KTMode { incremental, unseen };
enum class TrainablePolicy { last_conv_per_group, all };

struct KTConfig {
  double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 1.0;
  KTMode mode = KTMode::incremental;
  TrainablePolicy policy = TrainablePolicy::last_conv_per_group;
  bool head_trainable = true;    // selective policy: include the fc head
  bool remap_every_batch = true;
  bool per_sample_norm = false;  // ablation: normalize per sample, not per batch
  bool categorical_ce = false;   // ablation: standard cross entropy for the label term

  static KTConfig make(KTMode m) {
    KTConfig c;
    c.mode = m;
    if (m == KTMode::unseen) {
      c.lambda3 = 0.0;
      c.head_trainable = false;
    }
    return c;
  }

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
      throw ConfigError("kt: loss weights must be non-negative");
    if (lambda1 + lambda2 + lambda3 <= 0)
      throw ConfigError("kt: at least one loss weight must be positive");
    if (mode == KTMode::unseen && lambda3 != 0.0)
      throw ConfigError("kt: unseen mode is label-free; lambda3 must be 0");
  }
};

// ---------------------------------------------------------------------------
// Block mapping
// ---------------------------------------------------------------------------

struct GroupMapping {
  int group = 0;          // 1-based
  int teacher_block = 0;  // k*
  int student_block = 0;  // j*
  double similarity = 0.0;
  bool degenerate_fallback = false;
};

struct BlockMapping {
  std::vector<GroupMapping> groups;

  std::string format() const {  // "k:j;k:j;..." in group order
    std::string out;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (i) out += ";";
      out += std::to_string(groups[i].teacher_block) + ":" +
             std::to_string(groups[i].student_block);
    }
    return out;
  }
};

/// Value-level zero padding of trailing channels (no autograd).
template <class Real>
TensorT<Real> pad_channels_value(const TensorT<Real>& x, int target_channels) {
  if (x.c > target_channels)
    throw ShapeError("pad_channels: input " + x.dims_str() + " already exceeds target " +
                     std::to_string(target_channels) + " channels");
  if (x.c == target_channels) return x;
  TensorT<Real> out(x.n, target_channels, x.h, x.w);
  const std::size_t hw = std::size_t(x.h) * x.w;
  for (int s = 0; s < x.n; ++s)
    std::copy(x.data.begin() + std::ptrdiff_t(std::size_t(s) * x.c * hw),
              x.data.begin() + std::ptrdiff_t(std::size_t(s + 1) * x.c * hw),
              out.data.begin() + std::ptrdiff_t(std::size_t(s) * target_channels * hw));
  return out;
}

/// Cosine of the l2-normalized flattened maps; the student side must already
/// be padded to the teacher's channel count. Per-sample mode averages the
/// per-row cosines. A zero-norm side makes the pair unusable and returns
/// -infinity so it never wins the argmax.
template <class Real>
double cosine_sim(const TensorT<Real>& teacher, const TensorT<Real>& student,
                  bool per_sample = false) {
  check_same_dims(teacher, student, "cosine_sim");
  const double ninf = -std::numeric_limits<double>::infinity();
  if (!per_sample) {
    double dot = 0.0, tt = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < teacher.numel(); ++i) {
      const double a = double(teacher.data[i]), b = double(student.data[i]);
      dot += a * b;
      tt += a * a;
      ss += b * b;
    }
    if (tt == 0.0 || ss == 0.0) return ninf;
    return std::clamp(dot / (std::sqrt(tt) * std::sqrt(ss)), -1.0, 1.0);
  }
  const std::size_t row = teacher.numel() / std::size_t(std::max(teacher.n, 1));
  double acc = 0.0;
  for (int s = 0; s < teacher.n; ++s) {
    double dot = 0.0, tt = 0.0, ss = 0.0;
    const Real* a = teacher.data.data() + std::size_t(s) * row;
    const Real* b = student.data.data() + std::size_t(s) * row;
    for (std::size_t i = 0; i < row; ++i) {
      dot += double(a[i]) * double(b[i]);
      tt += double(a[i]) * double(a[i]);
      ss += double(b[i]) * double(b[i]);
    }
    if (tt == 0.0 || ss == 0.0) return ninf;
    acc += dot / (std::sqrt(tt) * std::sqrt(ss));
  }
  return std::clamp(acc / double(teacher.n), -1.0, 1.0);
}

/// Per group, the (teacher block, student block) pair with the highest
/// cosine similarity; ties resolve to the smallest teacher then student
/// index. If every pair in a group is degenerate the last-block pair is
/// used and flagged.
template <class Real>
BlockMapping select_mappings(const std::vector<TapRef<Real>>& teacher_taps,
                             const std::vector<TapRef<Real>>& student_taps,
                             bool per_sample = false) {
  int t_groups = 0, s_groups = 0;
  for (const auto& t : teacher_taps) t_groups = std::max(t_groups, t.group);
  for (const auto& s : student_taps) s_groups = std::max(s_groups, s.group);
  if (t_groups != s_groups || t_groups == 0)
    throw ShapeError("select_mappings: teacher has " + std::to_string(t_groups) +
                     " groups, student has " + std::to_string(s_groups));

  BlockMapping mapping;
  for (int g = 1; g <= t_groups; ++g) {
    GroupMapping best;
    best.group = g;
    best.similarity = -std::numeric_limits<double>::infinity();
    int last_k = 0, last_j = 0;
    for (const auto& t : teacher_taps) {
      if (t.group != g) continue;
      last_k = std::max(last_k, t.block);
      for (const auto& s : student_taps) {
        if (s.group != g) continue;
        last_j = std::max(last_j, s.block);
        if (s.act->value.h != t.act->value.h || s.act->value.w != t.act->value.w ||
            s.act->value.n != t.act->value.n)
          throw ShapeError("select_mappings: block outputs " + t.act->value.dims_str() + " vs " +
                           s.act->value.dims_str() + " in group " + std::to_string(g));
        const TensorT<Real> padded = pad_channels_value(s.act->value, t.act->value.c);
        const double sim = cosine_sim(t.act->value, padded, per_sample);
        if (sim > best.similarity) {
          best.similarity = sim;
          best.teacher_block = t.block;
          best.student_block = s.block;
        }
      }
    }
    if (best.teacher_block == 0) {  // every pair degenerate
      best.teacher_block = last_k;
      best.student_block = last_j;
      best.degenerate_fallback = true;
    }
    mapping.groups.push_back(best);
  }
  return mapping;
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// Distance between teacher and student final fully-connected outputs
/// (pre-softmax), over the whole batch.
template <class Real>
VarPtr<Real> loss_j1(const VarPtr<Real>& fc_teacher, const VarPtr<Real>& fc_student) {
  return euclidean_distance(fc_teacher, fc_student);
}

/// Distance between the mapped pair's normalized block outputs. Inputs must
/// already be l2-normalized (and the student side channel-padded).
template <class Real>
VarPtr<Real> loss_jb(const VarPtr<Real>& q_teacher, const VarPtr<Real>& q_student) {
  return euclidean_distance(q_teacher, q_student);
}

/// Two-sided log-likelihood term on softmax outputs, negated and batch
/// averaged; labels are expanded one-hot.
template <class Real>
VarPtr<Real> loss_j3(const std::vector<int>& labels, const VarPtr<Real>& probs) {
  const TensorT<float> hot = one_hot(labels, probs->value.c);
  return nll_two_sided(probs, hot.template cast<Real>());
}

struct KTLossBreakdown {
  double j1 = 0.0;
  std::vector<double> jb;  // one value per group
  double j3 = 0.0;
  double total = 0.0;
  BlockMapping mapping;

  double jb_sum() const {
    double s = 0.0;
    for (double v : jb) s += v;
    return s;
  }
};

template <class Real>
struct KTLossGraph {
  VarPtr<Real> total;
  KTLossBreakdown breakdown;
};

/// Builds the combined loss over a completed teacher/student forward pass.
/// Terms with zero weight are evaluated for the breakdown but kept out of
/// the gradient graph. Incremental mode requires labels; unseen mode
/// ignores them entirely.
template <class Real>
KTLossGraph<Real> total_loss(const KTConfig& cfg, const ForwardResult<Real>& teacher,
                             const ForwardResult<Real>& student, const BlockMapping& mapping,
                             const std::vector<int>* labels) {
  cfg.validate();
  if (cfg.mode == KTMode::incremental && labels == nullptr)
    throw ConfigError("kt: incremental mode requires labels");

  KTLossGraph<Real> out;
  out.breakdown.mapping = mapping;
  std::vector<VarPtr<Real>> terms;
  std::vector<Real> coeffs;

  auto j1 = loss_j1(teacher.logits, student.logits);
  out.breakdown.j1 = double(j1->value.data[0]);
  if (cfg.lambda1 > 0) {
    terms.push_back(j1);
    coeffs.push_back(Real(cfg.lambda1));
  }

  auto tap_of = [](const ForwardResult<Real>& res, int group, int block) -> const TapRef<Real>& {
    for (const auto& t : res.taps)
      if (t.group == group && t.block == block) return t;
    throw ShapeError("kt: no tap for group " + std::to_string(group) + " block " +
                     std::to_string(block));
  };
  for (const auto& gm : mapping.groups) {
    const auto& t_tap = tap_of(teacher, gm.group, gm.teacher_block);
    const auto& s_tap = tap_of(student, gm.group, gm.student_block);
    auto q_t = l2_normalize_flat(t_tap.act, cfg.per_sample_norm);
    auto q_s = l2_normalize_flat(pad_channels(s_tap.act, t_tap.act->value.c),
                                 cfg.per_sample_norm);
    auto jb = loss_jb(q_t.out, q_s.out);
    out.breakdown.jb.push_back(double(jb->value.data[0]));
    if (cfg.lambda2 > 0) {
      terms.push_back(jb);
      coeffs.push_back(Real(cfg.lambda2));
    }
  }

  if (cfg.mode == KTMode::incremental && cfg.lambda3 > 0) {
    VarPtr<Real> j3 = cfg.categorical_ce
                          ? cross_entropy_logits(student.logits, *labels)
                          : loss_j3(*labels, softmax_rows(student.logits));
    out.breakdown.j3 = double(j3->value.data[0]);
    terms.push_back(j3);
    coeffs.push_back(Real(cfg.lambda3));
  }

  if (terms.empty()) {
    // All weighted terms are inactive (e.g. lambda1=lambda3=0 with zero
    // groups); represent the zero loss explicitly.
    TensorT<Real> zero(1, 1, 1, 1);
    out.total = make_var(std::move(zero));
  } else {
    out.total = scalar_combine(terms, coeffs);
  }
  out.breakdown.total = double(out.total->value.data[0]);
  return out;
}

// ---------------------------------------------------------------------------
// Selective update policy
// ---------------------------------------------------------------------------

/// The parameter names a policy trains: per student group, the last conv
/// layer of the last block (weight plus its batchnorm scale/shift), and the
/// classifier head when flagged.
inline std::set<std::string> trainable_mask(const NetworkSpec& spec, TrainablePolicy policy,
                                            bool head_trainable) {
  std::set<std::string> mask;
  if (policy == TrainablePolicy::all) {
    // Callers expand 'all' against the built model (projections included).
    throw ConfigError("trainable_mask: 'all' policy has no structural mask");
  }
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto& blocks = spec.groups[gi].blocks;
    const std::size_t bi = blocks.size();            // last block, 1-based
    const std::size_t li = blocks.back().layers.size();  // last layer, 1-based
    const std::string base = "group" + std::to_string(gi + 1) + ".block" + std::to_string(bi);
    mask.insert(base + ".conv" + std::to_string(li) + ".weight");
    if (blocks.back().layers.back().has_batchnorm) {
      mask.insert(base + ".bn" + std::to_string(li) + ".scale");
      mask.insert(base + ".bn" + std::to_string(li) + ".shift");
    }
  }
  if (head_trainable) {
    mask.insert("head.fc.weight");
    mask.insert("head.fc.bias");
  }
  return mask;
}

/// Sets the trainable flag on every parameter per policy and returns the
/// trained-name set.
template <class Real>
std::set<std::string> apply_trainable_policy(ModelT<Real>& model, TrainablePolicy policy,
                                             bool head_trainable) {
  std::set<std::string> mask;
  if (policy == TrainablePolicy::all) {
    for (auto* p : model.parameters()) mask.insert(p->name);
  } else {
    mask = trainable_mask(model.spec(), policy, head_trainable);
  }
  for (auto* p : model.parameters()) p->trainable = mask.count(p->name) > 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

/// One knowledge-transfer loop: owns the optimizer, the trainable policy
/// application, and the per-batch mapping state. The teacher runs in eval
/// mode and is never modified; gradients reach only masked student
/// parameters.
template <class Real>
class KTSessionT {
 public:
  KTSessionT(ModelT<Real>& teacher, ModelT<Real>& student, KTConfig cfg, OptimizerT<Real> opt)
      : teacher_(teacher), student_(student), cfg_(cfg), opt_(std::move(opt)) {
    cfg_.validate();
    if (teacher_.spec().groups.size() != student_.spec().groups.size())
      throw ConfigError("kt: teacher and student must share the group count");
    if (teacher_.spec().class_count != student_.spec().class_count)
      throw ConfigError("kt: student head must be sized to the teacher class count");
    mask_ = apply_trainable_policy(student_, cfg_.policy, cfg_.head_trainable);
    params_ = student_.parameters();
  }

  const std::set<std::string>& mask() const { return mask_; }
  long long steps() const { return steps_; }
  const BlockMapping& mapping() const { return mapping_; }

  KTLossBreakdown step(const TensorT<Real>& input, const std::vector<int>* labels, Real lr) {
    ForwardResult<Real> t_res = [&] {
      NoGradGuard ng;  // teacher is a fixed oracle in eval normalization
      return teacher_.forward(input, {});
    }();
    // The student also normalizes with its (frozen) running statistics:
    // batchnorm scale/shift still train where masked, but no batch-stat
    // drift enters the transfer losses, and a student cloned from the
    // teacher is an exact fixed point of J1 and the J_b terms.
    ForwardResult<Real> s_res = student_.forward(input, {});

    if (cfg_.remap_every_batch || steps_ == 0)
      mapping_ = select_mappings(t_res.taps, s_res.taps, cfg_.per_sample_norm);

    auto graph = total_loss(cfg_, t_res, s_res, mapping_, labels);
    if (!std::isfinite(graph.breakdown.total))
      throw NumericError("kt loss is not finite at step " + std::to_string(steps_ + 1));
    student_.zero_grad();
    backward(graph.total);
    opt_.step(params_, lr);
    ++steps_;
    return graph.breakdown;
  }

 private:
  ModelT<Real>& teacher_;
  ModelT<Real>& student_;
  KTConfig cfg_;
  OptimizerT<Real> opt_;
  std::vector<ParameterT<Real>*> params_;
  std::set<std::string> mask_;
  BlockMapping mapping_;
  long long steps_ = 0;
};

using KTSession = KTSessionT<float>;

inline std::string kt_log_line(long long step, const KTLossBreakdown& b) {
  char buf[128];
  std::string out = "step=" + std::to_string(step) + " group_maps=" + b.mapping.format();
  std::snprintf(buf, sizeof buf, " j1=%.6f jb=", b.j1);
  out += buf;
  for (std::size_t i = 0; i < b.jb.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.6f", i ? "," : "", b.jb[i]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, " j3=%.6f loss=%.6f", b.j3, b.total);
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------
// Label-free data
// ---------------------------------------------------------------------------

/// Images only; by construction no label can reach the unseen-mode loss.
struct UnlabeledDataset {
  int channels = 3, height = 32, width = 32;
  std::vector<std::vector<std::uint8_t>> images;
};

inline UnlabeledDataset strip_labels(const Dataset& ds, const std::vector<int>& indices) {
  UnlabeledDataset out;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  out.images.reserve(indices.size());
  for (int i : indices) out.images.push_back(ds.images.at(std::size_t(i)).pixels);
  return out;
}

inline TensorT<float> make_unlabeled_batch(const UnlabeledDataset& ds,
                                           const std::vector<int>& indices,
                                           std::uint64_t epoch_seed, const AugmentConfig* aug) {
  TensorT<float> input(int(indices.size()), ds.channels, ds.height, ds.width);
  for (std::size_t bi = 0; bi < indices.size(); ++bi) {
    FloatImage f =
        standardize(ds.images.at(std::size_t(indices[bi])), ds.channels, ds.height, ds.width);
    if (aug) f = augment(f, *aug, mix_seed(epoch_seed, std::uint64_t(indices[bi])));
    std::copy(f.pix.begin(), f.pix.end(),
              input.data.begin() + std::ptrdiff_t(bi * f.pix.size()));
  }
  return input;
}

// ---------------------------------------------------------------------------
// Training procedures
// ---------------------------------------------------------------------------

struct KTTrainSettings {
  int epochs = 10;
  int batch_size = 64;
  OptKind optimizer = OptKind::sgd_nesterov;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LRSchedule schedule = LRSchedule::cosine(0.01, 10);
  AugmentConfig augment;
  bool augment_enabled = true;
  std::uint64_t data_seed = 0;
};

inline Optimizer make_kt_optimizer(const KTTrainSettings& s) {
  return s.optimizer == OptKind::sgd_nesterov
             ? Optimizer::sgd(float(s.momentum), float(s.weight_decay))
             : Optimizer::adam_opt(float(s.weight_decay));
}

/// Incremental learning: knowledge-transfer steps over new-category batches,
/// with old/new/average accuracy tracked per epoch and the best-validation
/// epoch's parameters restored at the end.
inline MetricsReport train_incremental(Model& teacher, Model& student, const Dataset& ds,
                                       const SplitPlan& plan, const KTConfig& cfg,
                                       const KTTrainSettings& settings) {
  cfg.validate();
  MetricsReport report;
  report.param_count = student.param_scalar_count();
  auto eval_epoch = [&](int epoch) {
    const double val_acc = evaluate(student, ds, plan.val_idx).accuracy();
    const EvalResult test = evaluate(student, ds, plan.test_idx);
    report.add_row(epoch, "val", "all", val_acc, 0.0);
    report.add_row(epoch, "test", "old", test.subset_accuracy(plan.old_classes), 0.0);
    report.add_row(epoch, "test", "new", test.subset_accuracy(plan.new_classes), 0.0);
    report.add_row(epoch, "test", "all", test.accuracy(), 0.0);
    return std::make_pair(val_acc, test.accuracy());
  };
  if (settings.epochs == 0) {
    auto [val, test] = eval_epoch(0);
    report.final_test_accuracy = test;
    return report;
  }

  KTSession session(teacher, student, cfg, make_kt_optimizer(settings));
  Model::Snapshot best_state = student.snapshot();
  std::vector<double> val_history, test_history;
  long long steps_per_epoch = 0;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    const float lr = float(settings.schedule.rate_at(epoch));
    const std::uint64_t epoch_seed = mix_seed(settings.data_seed, std::uint64_t(epoch));
    const auto batch_plan = batch_index_plan(plan.new_train_idx, settings.batch_size, epoch_seed);
    steps_per_epoch = (long long)batch_plan.size();
    double loss_sum = 0.0;
    long long seen = 0;
    for (const auto& idx : batch_plan) {
      Batch batch =
          make_batch(ds, idx, epoch_seed, settings.augment_enabled ? &settings.augment : nullptr);
      const auto breakdown = session.step(batch.input, &batch.labels, lr);
      report.kt_log.push_back(kt_log_line(session.steps(), breakdown));
      loss_sum += breakdown.total * double(idx.size());
      seen += (long long)idx.size();
    }
    report.add_row(epoch, "train", "new", -1.0, loss_sum / double(std::max(1LL, seen)));
    auto [val_acc, test_acc] = eval_epoch(epoch);
    val_history.push_back(val_acc);
    test_history.push_back(test_acc);
    if (val_acc > report.best_val_accuracy || report.best_epoch < 0) {
      report.best_val_accuracy = val_acc;
      report.best_epoch = epoch;
      best_state = student.snapshot();
    }
  }
  student.restore(best_state);
  report.final_test_accuracy = test_history[std::size_t(report.best_epoch)];
  finalize_convergence(report, val_history, steps_per_epoch);
  return report;
}

/// Label-free transfer for unseen categories: the loss sees only teacher
/// activations; held-out labeled data is used strictly for evaluation.
inline MetricsReport train_unseen(Model& teacher, Model& student,
                                  const UnlabeledDataset& transfer, const Dataset& eval_ds,
                                  const SplitPlan& plan, const KTConfig& cfg,
                                  const KTTrainSettings& settings) {
  if (cfg.mode != KTMode::unseen)
    throw ConfigError("train_unseen: config must be in unseen mode");
  cfg.validate();
  MetricsReport report;
  report.param_count = student.param_scalar_count();
  auto eval_epoch = [&](int epoch) {
    const double val_acc = evaluate(student, eval_ds, plan.val_idx).accuracy();
    const double test_acc = evaluate(student, eval_ds, plan.test_idx).accuracy();
    report.add_row(epoch, "val", "unseen", val_acc, 0.0);
    report.add_row(epoch, "test", "unseen", test_acc, 0.0);
    return std::make_pair(val_acc, test_acc);
  };
  if (settings.epochs == 0) {
    auto [val, test] = eval_epoch(0);
    report.final_test_accuracy = test;
    return report;
  }

  KTSession session(teacher, student, cfg, make_kt_optimizer(settings));
  Model::Snapshot best_state = student.snapshot();
  std::vector<double> val_history, test_history;
  long long steps_per_epoch = 0;
  std::vector<int> indices(transfer.images.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = int(i);
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    const float lr = float(settings.schedule.rate_at(epoch));
    const std::uint64_t epoch_seed = mix_seed(settings.data_seed, std::uint64_t(epoch));
    const auto batch_plan = batch_index_plan(indices, settings.batch_size, epoch_seed);
    steps_per_epoch = (long long)batch_plan.size();
    double loss_sum = 0.0;
    long long seen = 0;
    for (const auto& idx : batch_plan) {
      TensorT<float> input = make_unlabeled_batch(
          transfer, idx, epoch_seed, settings.augment_enabled ? &settings.augment : nullptr);
      const auto breakdown = session.step(input, nullptr, lr);
      report.kt_log.push_back(kt_log_line(session.steps(), breakdown));
      loss_sum += breakdown.total * double(idx.size());
      seen += (long long)idx.size();
    }
    report.add_row(epoch, "train", "transfer", -1.0, loss_sum / double(std::max(1LL, seen)));
    auto [val_acc, test_acc] = eval_epoch(epoch);
    val_history.push_back(val_acc);
    test_history.push_back(test_acc);
    if (val_acc > report.best_val_accuracy || report.best_epoch < 0) {
      report.best_val_accuracy = val_acc;
      report.best_epoch = epoch;
      best_state = student.snapshot();
    }
  }
  student.restore(best_state);
  report.final_test_accuracy = test_history[std::size_t(report.best_epoch)];
  finalize_convergence(report, val_history, steps_per_epoch);
  return report;
}

}  // namespace edgekt
