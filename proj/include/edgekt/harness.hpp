#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "edgekt/checkpoint.hpp"
#include "edgekt/config.hpp"
#include "edgekt/kt.hpp"
#include "edgekt/prune.hpp"
#include "edgekt/train.hpp"

namespace edgekt {
namespace harness {

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> data;
};

/// Resolved run context shared by every command: the parsed config, the
/// master seed, and the output directory. Stage seeds default to values
/// derived from the master seed, so one `--seed` reshuffles everything.
struct RunContext {
  ConfigFile cfg;
  std::uint64_t master_seed = 0;
  std::string out_dir;
  std::optional<std::string> data_dir_override;

  static RunContext from_file(const std::string& config_path, const CliOverrides& overrides) {
    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot open config file: " + config_path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    RunContext ctx{ConfigFile::parse(text, config_path)};
    ctx.master_seed = overrides.seed ? *overrides.seed
                                     : std::uint64_t(ctx.cfg.get_int("run", "seed", 0));
    ctx.out_dir = overrides.out ? *overrides.out : ctx.cfg.get_string("run", "out", "run-out");
    ctx.data_dir_override = overrides.data;
    return ctx;
  }

  std::uint64_t stage_seed(const char* section, const char* key, std::uint64_t tag) const {
    if (cfg.has(section, key)) return std::uint64_t(cfg.get_int(section, key, 0));
    return mix_seed(master_seed, tag);
  }
};

// ---------------------------------------------------------------------------
// Config -> domain objects
// ---------------------------------------------------------------------------

inline Dataset load_dataset(const RunContext& ctx) {
  const std::string source = ctx.cfg.get_string("data", "source", "synth");
  if (source == "synth") {
    const int classes = int(ctx.cfg.get_int("data", "classes", 4));
    const int per_class = int(ctx.cfg.get_int("data", "per_class", 500));
    const int image_size = int(ctx.cfg.get_int("data", "image_size", 32));
    const std::uint64_t seed = ctx.stage_seed("data", "data_seed", 0xd5);
    return synth_dataset(classes, per_class, image_size, seed);
  }
  if (source == "cifar10") {
    std::string dir = ctx.cfg.get_string("data", "dir", "");
    if (ctx.data_dir_override) dir = *ctx.data_dir_override;
    if (dir.empty()) throw ConfigError("cifar10 data source needs [data] dir or --data");
    Cifar10 cifar = load_cifar10_bin(dir);
    // Seeded splits are drawn over the union of the published batches.
    Dataset all = std::move(cifar.train);
    all.images.insert(all.images.end(), cifar.test.images.begin(), cifar.test.images.end());
    return all;
  }
  throw ConfigError("unknown [data] source '" + source + "' (expected synth or cifar10)");
}

inline Protocol parse_protocol(const RunContext& ctx) {
  const std::string p = ctx.cfg.get_string("data", "protocol", "plain");
  if (p == "plain") return Protocol::plain;
  if (p == "incremental") return Protocol::incremental;
  if (p == "unseen") return Protocol::unseen;
  throw ConfigError("unknown [data] protocol '" + p + "'");
}

inline SplitPlan load_splits(const RunContext& ctx, const Dataset& ds, Protocol protocol) {
  SplitFractions fr;
  fr.train = ctx.cfg.get_real("data", "train_fraction", 0.70);
  fr.val = ctx.cfg.get_real("data", "val_fraction", 0.15);
  fr.test = ctx.cfg.get_real("data", "test_fraction", 0.15);
  const std::uint64_t seed = ctx.stage_seed("data", "split_seed", 0x51);
  const int subset = int(ctx.cfg.get_int("data", "subset", 0));
  return make_splits(ds, protocol, fr, seed, subset);
}

inline TrainSettings load_train_settings(const RunContext& ctx, const Dataset& ds) {
  TrainSettings s;
  s.epochs = int(ctx.cfg.get_int("train", "epochs", 10));
  if (s.epochs < 0) throw ConfigError("[train] epochs must be >= 0");
  s.batch_size = int(ctx.cfg.get_int("train", "batch_size", 64));
  const std::string opt = ctx.cfg.get_string("train", "optimizer", "sgd-nesterov");
  if (opt == "sgd-nesterov")
    s.optimizer = OptKind::sgd_nesterov;
  else if (opt == "adam")
    s.optimizer = OptKind::adam;
  else
    throw ConfigError("unknown [train] optimizer '" + opt + "'");
  s.momentum = ctx.cfg.get_real("train", "momentum", 0.9);
  s.weight_decay = ctx.cfg.get_real("train", "weight_decay", 0.0005);

  const std::string kind = ctx.cfg.get_string("train", "schedule", "cosine");
  const double base = ctx.cfg.get_real("train", "base_rate", 0.1);
  const int total = std::max(1, s.epochs);
  if (kind == "cosine")
    s.schedule = LRSchedule::cosine(base, total);
  else if (kind == "constant")
    s.schedule = LRSchedule::constant(base, total);
  else if (kind == "exponential")
    s.schedule = LRSchedule::exponential(base, total,
                                         ctx.cfg.get_real("train", "decay_factor", 0.98));
  else if (kind == "step-drop")
    s.schedule = LRSchedule::step_drop(base, total, ctx.cfg.get_int_list("train", "drop_epochs"),
                                       ctx.cfg.get_real("train", "drop_factor", 0.1));
  else
    throw ConfigError("unknown [train] schedule '" + kind + "'");

  s.augment_enabled = ctx.cfg.get_bool("train", "augment", true);
  s.augment.crop_h = ds.height;
  s.augment.crop_w = ds.width;
  s.data_seed = ctx.stage_seed("train", "data_order_seed", 0x0d);
  return s;
}

inline KTTrainSettings to_kt_settings(const TrainSettings& s) {
  KTTrainSettings k;
  k.epochs = s.epochs;
  k.batch_size = s.batch_size;
  k.optimizer = s.optimizer;
  k.momentum = s.momentum;
  k.weight_decay = s.weight_decay;
  k.schedule = s.schedule;
  k.augment = s.augment;
  k.augment_enabled = s.augment_enabled;
  k.data_seed = s.data_seed;
  return k;
}

inline KTConfig load_kt_config(const RunContext& ctx, KTMode mode) {
  KTConfig cfg = KTConfig::make(mode);
  cfg.lambda1 = ctx.cfg.get_real("kt", "lambda1", cfg.lambda1);
  cfg.lambda2 = ctx.cfg.get_real("kt", "lambda2", cfg.lambda2);
  cfg.lambda3 = ctx.cfg.get_real("kt", "lambda3", cfg.lambda3);
  const std::string policy = ctx.cfg.get_string("kt", "policy", "last-conv-per-group");
  if (policy == "last-conv-per-group")
    cfg.policy = TrainablePolicy::last_conv_per_group;
  else if (policy == "all")
    cfg.policy = TrainablePolicy::all;
  else
    throw ConfigError("unknown [kt] policy '" + policy + "'");
  cfg.head_trainable = ctx.cfg.get_bool("kt", "head_trainable", cfg.head_trainable);
  cfg.remap_every_batch = ctx.cfg.get_bool("kt", "remap_every_batch", true);
  cfg.per_sample_norm = ctx.cfg.get_bool("kt", "per_sample_norm", false);
  cfg.categorical_ce = ctx.cfg.get_bool("kt", "categorical_ce", false);
  cfg.validate();
  return cfg;
}

inline NetworkSpec load_spec_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open network spec: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_spec(text);
}

// ---------------------------------------------------------------------------
// Output artifacts
// ---------------------------------------------------------------------------

inline void write_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(content.data(), std::streamsize(content.size()));
  if (!os) throw DataError("write failed: " + path);
}

inline std::string metrics_csv(const MetricsReport& r) {
  std::string out = "epoch,split,category_set,accuracy,loss\n";
  char buf[192];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%s,%.6f,%.6f\n", row.epoch, row.split.c_str(),
                  row.category_set.c_str(), row.accuracy, row.loss);
    out += buf;
  }
  return out;
}

using SummaryPairs = std::vector<std::pair<std::string, std::string>>;

inline std::string summary_text(const SummaryPairs& pairs) {
  std::string out;
  for (const auto& [k, v] : pairs) out += k + "=" + v + "\n";
  return out;
}

inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void append_report_summary(SummaryPairs& pairs, const MetricsReport& r) {
  pairs.emplace_back("best_epoch", std::to_string(r.best_epoch));
  pairs.emplace_back("best_val_accuracy", fmt_real(r.best_val_accuracy));
  pairs.emplace_back("final_test_accuracy", fmt_real(r.final_test_accuracy));
  pairs.emplace_back("convergence_epoch", std::to_string(r.convergence_epoch));
  pairs.emplace_back("convergence_steps", std::to_string(r.convergence_steps));
  pairs.emplace_back("param_count", std::to_string(r.param_count));
}

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += "\n";
  }
  return out;
}

inline std::string out_path(const RunContext& ctx, const std::string& name) {
  return (std::filesystem::path(ctx.out_dir) / name).string();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void check_class_count(const NetworkSpec& spec, const Dataset& ds) {
  if (spec.class_count != ds.class_count)
    throw ConfigError("network head has " + std::to_string(spec.class_count) +
                      " classes but the dataset has " + std::to_string(ds.class_count));
}

inline MetricsReport cmd_train_teacher(const RunContext& ctx) {
  if (parse_protocol(ctx) != Protocol::plain)
    throw ConfigError("train-teacher expects [data] protocol = plain");
  Dataset ds = load_dataset(ctx);
  SplitPlan plan = load_splits(ctx, ds, Protocol::plain);
  NetworkSpec spec = load_spec_file(ctx.cfg.require_string("arch", "teacher_spec"));
  check_class_count(spec, ds);
  TrainSettings settings = load_train_settings(ctx, ds);
  Model model(spec, ctx.stage_seed("train", "init_seed", 0x11));
  MetricsReport report =
      train_supervised(model, ds, plan.train_idx, plan.val_idx, plan.test_idx, settings);
  save_checkpoint(model, out_path(ctx, "teacher.ckpt"));
  write_file(out_path(ctx, "metrics.csv"), metrics_csv(report));
  SummaryPairs summary{{"command", "train-teacher"}, {"model", spec.name}};
  append_report_summary(summary, report);
  write_file(out_path(ctx, "summary.txt"), summary_text(summary));
  ctx.cfg.reject_unconsumed();
  return report;
}

struct CompressOutputs {
  NetworkSpec student;
  SparsityReport report;
  double ratio = 1.0;
};

inline CompressOutputs cmd_compress(const RunContext& ctx) {
  Dataset ds = load_dataset(ctx);
  SplitPlan plan = load_splits(ctx, ds, parse_protocol(ctx));
  Model teacher = load_checkpoint(ctx.cfg.require_string("arch", "teacher_checkpoint"));
  check_class_count(teacher.spec(), ds);

  PruningConfig pcfg;
  pcfg.threshold = ctx.cfg.get_real("prune", "threshold", 0.9);
  pcfg.sample_count = int(ctx.cfg.get_int("prune", "sample_count", 64));
  pcfg.calibration_seed = ctx.stage_seed("prune", "calibration_seed", 0xca);
  const bool dump_fractions = ctx.cfg.get_bool("prune", "dump_fractions", false);

  // Calibration draws from the training split only.
  Dataset calib;
  calib.channels = ds.channels;
  calib.height = ds.height;
  calib.width = ds.width;
  calib.class_count = ds.class_count;
  calib.generator = ds.generator;
  for (int i : plan.train_idx) calib.images.push_back(ds.images.at(std::size_t(i)));

  CompressionResult result = compress(teacher, calib, pcfg);
  write_file(out_path(ctx, "student.netspec"), serialize_spec(result.student));
  write_file(out_path(ctx, "sparsity.txt"), format_sparsity_report(result.teacher_report));
  if (dump_fractions)
    write_file(out_path(ctx, "sparsity_fractions.txt"),
               format_sparsity_report(result.teacher_report, true));
  SummaryPairs summary{
      {"command", "compress"},
      {"teacher", teacher.spec().name},
      {"student", result.student.name},
      {"threshold", fmt_real(pcfg.threshold)},
      {"sample_count", std::to_string(pcfg.sample_count)},
      {"teacher_params", std::to_string(count_params(teacher.spec()))},
      {"student_params", std::to_string(count_params(result.student))},
      {"ratio", fmt_real(result.ratio)},
      {"ratio_display", format_ratio(result.ratio)},
  };
  write_file(out_path(ctx, "summary.txt"), summary_text(summary));
  ctx.cfg.reject_unconsumed();
  return {result.student, result.teacher_report, result.ratio};
}

/// Trains the (compressed) student from scratch, plain supervised. Under the
/// incremental protocol it trains on old categories; under unseen, on seen
/// categories; model selection uses the matching validation subset.
inline MetricsReport cmd_retrain_student(const RunContext& ctx) {
  Dataset ds = load_dataset(ctx);
  const Protocol protocol = parse_protocol(ctx);
  SplitPlan plan = load_splits(ctx, ds, protocol);
  NetworkSpec spec = load_spec_file(ctx.cfg.require_string("arch", "student_spec"));
  check_class_count(spec, ds);
  TrainSettings settings = load_train_settings(ctx, ds);
  Model model(spec, ctx.stage_seed("train", "init_seed", 0x11));

  const std::vector<int>* train = &plan.train_idx;
  const std::vector<int>* val = &plan.val_idx;
  const std::vector<int>* test = &plan.test_idx;
  if (protocol == Protocol::incremental) {
    train = &plan.old_train_idx;
    val = &plan.old_val_idx;
  } else if (protocol == Protocol::unseen) {
    val = &plan.seen_val_idx;
    test = &plan.seen_test_idx;
  }
  MetricsReport report = train_supervised(model, ds, *train, *val, *test, settings);

  // Final per-category breakdown over the full test composition.
  std::vector<int> full_test = plan.test_idx;
  full_test.insert(full_test.end(), plan.seen_test_idx.begin(), plan.seen_test_idx.end());
  const EvalResult final_eval = evaluate(model, ds, full_test);
  if (protocol == Protocol::incremental) {
    report.add_row(report.best_epoch, "final", "old",
                   final_eval.subset_accuracy(plan.old_classes), 0.0);
    report.add_row(report.best_epoch, "final", "new",
                   final_eval.subset_accuracy(plan.new_classes), 0.0);
  } else if (protocol == Protocol::unseen) {
    report.add_row(report.best_epoch, "final", "seen",
                   final_eval.subset_accuracy(plan.seen_classes), 0.0);
    report.add_row(report.best_epoch, "final", "unseen",
                   final_eval.subset_accuracy(plan.unseen_classes), 0.0);
  }
  report.add_row(report.best_epoch, "final", "all", final_eval.accuracy(), 0.0);

  save_checkpoint(model, out_path(ctx, "student.ckpt"));
  write_file(out_path(ctx, "metrics.csv"), metrics_csv(report));
  SummaryPairs summary{{"command", "retrain-student"}, {"model", spec.name}};
  append_report_summary(summary, report);
  write_file(out_path(ctx, "summary.txt"), summary_text(summary));
  ctx.cfg.reject_unconsumed();
  return report;
}

struct KTIncrementalOutputs {
  MetricsReport with_kt;
  std::optional<MetricsReport> without_kt;
};

inline KTIncrementalOutputs cmd_kt_incremental(const RunContext& ctx) {
  Dataset ds = load_dataset(ctx);
  const Protocol protocol = parse_protocol(ctx);
  if (protocol != Protocol::incremental)
    throw ConfigError("kt-incremental expects [data] protocol = incremental");
  SplitPlan plan = load_splits(ctx, ds, protocol);
  Model teacher = load_checkpoint(ctx.cfg.require_string("arch", "teacher_checkpoint"));
  Model student = load_checkpoint(ctx.cfg.require_string("arch", "student_checkpoint"));
  check_class_count(teacher.spec(), ds);
  check_class_count(student.spec(), ds);
  const KTConfig cfg = load_kt_config(ctx, KTMode::incremental);
  const KTTrainSettings settings = to_kt_settings(load_train_settings(ctx, ds));
  const bool run_ablation = ctx.cfg.get_bool("kt", "ablation", false);
  Model baseline_student = student.clone();

  auto at_best = [](const MetricsReport& r, const std::string& set) {
    for (const auto& row : r.rows)
      if (row.epoch == (r.best_epoch < 0 ? 0 : r.best_epoch) && row.split == "test" &&
          row.category_set == set)
        return row.accuracy;
    return 0.0;
  };

  KTIncrementalOutputs out;
  out.with_kt = train_incremental(teacher, student, ds, plan, cfg, settings);
  save_checkpoint(student, out_path(ctx, "student_kt.ckpt"));
  write_file(out_path(ctx, "metrics.csv"), metrics_csv(out.with_kt));
  write_file(out_path(ctx, "kt_run.log"), join_lines(out.with_kt.kt_log));

  SummaryPairs summary{{"command", "kt-incremental"}};
  append_report_summary(summary, out.with_kt);
  summary.emplace_back("old_accuracy", fmt_real(at_best(out.with_kt, "old")));
  summary.emplace_back("new_accuracy", fmt_real(at_best(out.with_kt, "new")));
  summary.emplace_back("avg_accuracy", fmt_real(at_best(out.with_kt, "all")));

  if (run_ablation) {
    // Same seeds and data order; only the loss weights and the trainable
    // mask differ, so the accuracy gap is attributable to the transfer.
    KTConfig ab = cfg;
    ab.lambda1 = 0.0;
    ab.lambda2 = 0.0;
    ab.lambda3 = 1.0;
    ab.policy = TrainablePolicy::all;
    out.without_kt = train_incremental(teacher, baseline_student, ds, plan, ab, settings);
    save_checkpoint(baseline_student, out_path(ctx, "student_ablation.ckpt"));
    write_file(out_path(ctx, "metrics_ablation.csv"), metrics_csv(*out.without_kt));
    write_file(out_path(ctx, "kt_run_ablation.log"), join_lines(out.without_kt->kt_log));
    summary.emplace_back("ablation_old_accuracy", fmt_real(at_best(*out.without_kt, "old")));
    summary.emplace_back("ablation_new_accuracy", fmt_real(at_best(*out.without_kt, "new")));
    summary.emplace_back("ablation_avg_accuracy", fmt_real(at_best(*out.without_kt, "all")));
  }
  write_file(out_path(ctx, "summary.txt"), summary_text(summary));
  ctx.cfg.reject_unconsumed();
  return out;
}

struct KTUnseenOutputs {
  double independent_accuracy = 0.0;  // pre-transfer student on unseen test
  MetricsReport dependent;            // post-transfer
};

inline KTUnseenOutputs cmd_kt_unseen(const RunContext& ctx) {
  Dataset ds = load_dataset(ctx);
  const Protocol protocol = parse_protocol(ctx);
  if (protocol != Protocol::unseen)
    throw ConfigError("kt-unseen expects [data] protocol = unseen");
  SplitPlan plan = load_splits(ctx, ds, protocol);
  Model teacher = load_checkpoint(ctx.cfg.require_string("arch", "teacher_checkpoint"));
  Model student = load_checkpoint(ctx.cfg.require_string("arch", "student_checkpoint"));
  check_class_count(teacher.spec(), ds);
  check_class_count(student.spec(), ds);
  const KTConfig cfg = load_kt_config(ctx, KTMode::unseen);
  const KTTrainSettings settings = to_kt_settings(load_train_settings(ctx, ds));

  KTUnseenOutputs out;
  out.independent_accuracy = evaluate(student, ds, plan.test_idx).accuracy();

  // Labels are physically absent from the transfer pool.
  const UnlabeledDataset transfer = strip_labels(ds, plan.transfer_idx);
  out.dependent = train_unseen(teacher, student, transfer, ds, plan, cfg, settings);
  out.dependent.rows.push_back({-1, "test", "unseen", out.independent_accuracy, 0.0});

  save_checkpoint(student, out_path(ctx, "student_kt.ckpt"));
  write_file(out_path(ctx, "metrics.csv"), metrics_csv(out.dependent));
  write_file(out_path(ctx, "kt_run.log"), join_lines(out.dependent.kt_log));
  SummaryPairs summary{{"command", "kt-unseen"}};
  append_report_summary(summary, out.dependent);
  summary.emplace_back("independent_unseen_accuracy", fmt_real(out.independent_accuracy));
  summary.emplace_back("dependent_unseen_accuracy", fmt_real(out.dependent.final_test_accuracy));
  write_file(out_path(ctx, "summary.txt"), summary_text(summary));
  ctx.cfg.reject_unconsumed();
  return out;
}

inline std::vector<CategoryAccuracy> cmd_eval(const RunContext& ctx) {
  Dataset ds = load_dataset(ctx);
  const Protocol protocol = parse_protocol(ctx);
  SplitPlan plan = load_splits(ctx, ds, protocol);
  Model model = load_checkpoint(ctx.cfg.require_string("eval", "checkpoint"));
  check_class_count(model.spec(), ds);

  std::vector<int> test = plan.test_idx;
  test.insert(test.end(), plan.seen_test_idx.begin(), plan.seen_test_idx.end());
  const EvalResult res = evaluate(model, ds, test);

  auto set_classes = [&](const std::string& label) -> std::vector<int> {
    if (label == "old") return plan.old_classes;
    if (label == "new") return plan.new_classes;
    if (label == "seen") return plan.seen_classes;
    if (label == "unseen") return plan.unseen_classes;
    throw ConfigError("unknown eval set '" + label + "'");
  };
  std::vector<std::string> sets;
  {
    const std::string s = ctx.cfg.get_string("eval", "sets", "");
    if (s.empty()) {
      if (protocol == Protocol::incremental) sets = {"old", "new", "all"};
      else if (protocol == Protocol::unseen) sets = {"seen", "unseen", "all"};
      else sets = {"all"};
    } else {
      std::istringstream is(s);
      std::string item;
      while (std::getline(is, item, ',')) sets.push_back(item);
    }
  }
  std::vector<CategoryAccuracy> out;
  std::string csv = "set,correct,total,percentage\n";
  char buf[128];
  for (const auto& label : sets) {
    CategoryAccuracy acc;
    acc.set_label = label;
    if (label == "all") {
      acc.correct = res.correct;
      acc.total = res.total;
    } else {
      for (int k : set_classes(label)) {
        auto it = res.per_class.find(k);
        if (it == res.per_class.end()) continue;
        acc.correct += it->second.first;
        acc.total += it->second.second;
      }
    }
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%.6f\n", acc.set_label.c_str(), acc.correct,
                  acc.total, acc.percentage());
    csv += buf;
    out.push_back(acc);
  }
  write_file(out_path(ctx, "category_accuracy.csv"), csv);
  ctx.cfg.reject_unconsumed();
  return out;
}

/// Consolidates the summary files under a directory (or of the directory
/// itself) into one CSV plus an aligned text table.
inline std::string cmd_report(const std::string& dir) {
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> runs;
  auto read_summary = [](const std::string& path) {
    std::map<std::string, std::string> kv;
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
  };
  namespace fs = std::filesystem;
  if (fs::exists(fs::path(dir) / "summary.txt"))
    runs.emplace_back(fs::path(dir).filename().string(),
                      read_summary((fs::path(dir) / "summary.txt").string()));
  std::vector<std::string> subdirs;
  if (fs::is_directory(dir))
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_directory() && fs::exists(entry.path() / "summary.txt"))
        subdirs.push_back(entry.path().string());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& sub : subdirs)
    runs.emplace_back(fs::path(sub).filename().string(),
                      read_summary((fs::path(sub) / "summary.txt").string()));
  if (runs.empty()) throw DataError("report: no summary.txt found under " + dir);

  const std::vector<std::string> columns = {
      "command",          "model",
      "final_test_accuracy", "param_count",
      "ratio_display",    "old_accuracy",
      "new_accuracy",     "avg_accuracy",
      "ablation_old_accuracy", "independent_unseen_accuracy",
      "dependent_unseen_accuracy"};
  std::string csv = "run";
  for (const auto& c : columns) csv += "," + c;
  csv += "\n";
  for (const auto& [name, kv] : runs) {
    csv += name;
    for (const auto& c : columns) {
      auto it = kv.find(c);
      csv += ",";
      if (it != kv.end()) csv += it->second;
    }
    csv += "\n";
  }

  // Aligned text mirror.
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header = {"run"};
  header.insert(header.end(), columns.begin(), columns.end());
  table.push_back(header);
  for (const auto& [name, kv] : runs) {
    std::vector<std::string> row = {name};
    for (const auto& c : columns) {
      auto it = kv.find(c);
      row.push_back(it == kv.end() ? "-" : it->second);
    }
    table.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  std::string text;
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      text += row[i];
      if (i + 1 < row.size()) text += std::string(width[i] - row[i].size() + 2, ' ');
    }
    text += "\n";
  }

  write_file((fs::path(dir) / "report.csv").string(), csv);
  write_file((fs::path(dir) / "report.txt").string(), text);
  return text;
}

/// CLI entry shared with tests: runs one command and maps errors to the
/// documented exit codes (0 ok, 2 config, 3 data/format, 4 numeric).
inline int run_command(const std::string& command, const std::string& config_path,
                       const CliOverrides& overrides) {
  try {
    if (command == "report") {
      std::string dir = overrides.out.value_or("");
      if (dir.empty() && !config_path.empty()) {
        RunContext ctx = RunContext::from_file(config_path, overrides);
        dir = ctx.out_dir;
      }
      if (dir.empty()) throw ConfigError("report needs --out <dir> (or a config with [run] out)");
      std::fputs(cmd_report(dir).c_str(), stdout);
      return 0;
    }
    RunContext ctx = RunContext::from_file(config_path, overrides);
    if (command == "train-teacher") {
      const auto r = cmd_train_teacher(ctx);
      std::printf("train-teacher: best_epoch=%d test_accuracy=%.2f%%\n", r.best_epoch,
                  r.final_test_accuracy);
    } else if (command == "compress") {
      const auto r = cmd_compress(ctx);
      std::printf("compress: student_params=%lld ratio=%s\n",
                  count_params(r.student), format_ratio(r.ratio).c_str());
    } else if (command == "retrain-student") {
      const auto r = cmd_retrain_student(ctx);
      std::printf("retrain-student: best_epoch=%d test_accuracy=%.2f%%\n", r.best_epoch,
                  r.final_test_accuracy);
    } else if (command == "kt-incremental") {
      const auto r = cmd_kt_incremental(ctx);
      std::printf("kt-incremental: test_accuracy=%.2f%%\n", r.with_kt.final_test_accuracy);
    } else if (command == "kt-unseen") {
      const auto r = cmd_kt_unseen(ctx);
      std::printf("kt-unseen: independent=%.2f%% dependent=%.2f%%\n", r.independent_accuracy,
                  r.dependent.final_test_accuracy);
    } else if (command == "eval") {
      const auto r = cmd_eval(ctx);
      for (const auto& acc : r)
        std::printf("eval: set=%s accuracy=%.2f%% (%d/%d)\n", acc.set_label.c_str(),
                    acc.percentage(), acc.correct, acc.total);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace harness
}  // namespace edgekt
