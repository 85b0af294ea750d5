#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "edgekt/data.hpp"
#include "edgekt/model.hpp"
#include "edgekt/optim.hpp"

namespace edgekt {

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  int correct = 0, total = 0;
  std::map<int, std::pair<int, int>> per_class;  // label -> (correct, total)

  double accuracy() const { return total == 0 ? 0.0 : 100.0 * double(correct) / double(total); }

  /// Sample-weighted accuracy over a category subset.
  double subset_accuracy(const std::vector<int>& classes) const {
    int c = 0, t = 0;
    for (int k : classes) {
      auto it = per_class.find(k);
      if (it == per_class.end()) continue;
      c += it->second.first;
      t += it->second.second;
    }
    return t == 0 ? 0.0 : 100.0 * double(c) / double(t);
  }
};

/// Top-1 accuracy from eval-mode forward passes over the given indices.
inline EvalResult evaluate(Model& model, const Dataset& ds, const std::vector<int>& indices,
                           int chunk = 128) {
  EvalResult res;
  for (std::size_t begin = 0; begin < indices.size(); begin += std::size_t(chunk)) {
    const std::size_t end = std::min(indices.size(), begin + std::size_t(chunk));
    std::vector<int> idx(indices.begin() + std::ptrdiff_t(begin),
                         indices.begin() + std::ptrdiff_t(end));
    Batch batch = make_batch(ds, idx, 0, nullptr);
    const auto preds = model.predict(batch.input);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      auto& pc = res.per_class[batch.labels[i]];
      ++pc.second;
      ++res.total;
      if (preds[i] == batch.labels[i]) {
        ++pc.first;
        ++res.correct;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct CategoryAccuracy {
  std::string set_label;
  int correct = 0, total = 0;

  double percentage() const { return total == 0 ? 0.0 : 100.0 * double(correct) / double(total); }
};

struct MetricRow {
  int epoch = 0;
  std::string split;         // train | val | test
  std::string category_set;  // all | old | new | seen | unseen
  double accuracy = 0.0;
  double loss = 0.0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  double final_test_accuracy = 0.0;  // test accuracy at the best-val epoch
  int convergence_epoch = -1;        // first epoch within 0.1 points of best val
  long long convergence_steps = -1;  // batch steps through that epoch
  long long param_count = 0;
  std::vector<std::string> kt_log;  // step lines for knowledge-transfer runs

  void add_row(int epoch, const std::string& split, const std::string& set, double acc,
               double loss) {
    rows.push_back({epoch, split, set, acc, loss});
  }
};

/// Convergence rule: the first epoch whose validation accuracy comes within
/// 0.1 points of the run's best.
inline void finalize_convergence(MetricsReport& report, const std::vector<double>& val_history,
                                 long long steps_per_epoch) {
  if (val_history.empty()) return;
  const double best = *std::max_element(val_history.begin(), val_history.end());
  for (std::size_t e = 0; e < val_history.size(); ++e) {
    if (val_history[e] >= best - 0.1) {
      report.convergence_epoch = int(e);
      report.convergence_steps = steps_per_epoch * (long long)(e + 1);
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Supervised training
// ---------------------------------------------------------------------------

struct TrainSettings {
  int epochs = 10;
  int batch_size = 64;
  OptKind optimizer = OptKind::sgd_nesterov;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LRSchedule schedule = LRSchedule::cosine(0.1, 10);
  AugmentConfig augment;
  bool augment_enabled = true;
  std::uint64_t data_seed = 0;
};

inline Optimizer make_optimizer(const TrainSettings& s) {
  return s.optimizer == OptKind::sgd_nesterov
             ? Optimizer::sgd(float(s.momentum), float(s.weight_decay))
             : Optimizer::adam_opt(float(s.weight_decay));
}

/// From-scratch supervised training with softmax cross entropy. Evaluates
/// val/test each epoch, then restores the parameters of the epoch with the
/// highest validation accuracy.
inline MetricsReport train_supervised(Model& model, const Dataset& ds,
                                      const std::vector<int>& train_idx,
                                      const std::vector<int>& val_idx,
                                      const std::vector<int>& test_idx,
                                      const TrainSettings& settings) {
  MetricsReport report;
  report.param_count = model.param_scalar_count();
  if (settings.epochs == 0) {
    report.final_test_accuracy = evaluate(model, ds, test_idx).accuracy();
    report.add_row(0, "test", "all", report.final_test_accuracy, 0.0);
    return report;
  }

  Optimizer opt = make_optimizer(settings);
  auto params = model.parameters();
  Model::Snapshot best_state = model.snapshot();
  std::vector<double> val_history, test_history;
  long long steps_per_epoch = 0;

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    const float lr = float(settings.schedule.rate_at(epoch));
    const std::uint64_t epoch_seed = mix_seed(settings.data_seed, std::uint64_t(epoch));
    const auto plan = batch_index_plan(train_idx, settings.batch_size, epoch_seed);
    steps_per_epoch = (long long)plan.size();
    double loss_sum = 0.0;
    long long seen = 0, correct = 0;
    for (const auto& idx : plan) {
      Batch batch =
          make_batch(ds, idx, epoch_seed, settings.augment_enabled ? &settings.augment : nullptr);
      ForwardOptions<float> fopts;
      fopts.train = true;
      auto res = model.forward(batch.input, fopts);
      auto loss = cross_entropy_logits(res.logits, batch.labels);
      if (!std::isfinite(double(loss->value.data[0])))
        throw NumericError("training loss is not finite at epoch " + std::to_string(epoch));
      loss_sum += double(loss->value.data[0]) * double(idx.size());
      const auto preds = argmax_rows(res.logits->value);
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == batch.labels[i]) ++correct;
      seen += (long long)idx.size();
      model.zero_grad();
      backward(loss);
      opt.step(params, lr);
    }
    const double train_acc = seen ? 100.0 * double(correct) / double(seen) : 0.0;
    const double val_acc = evaluate(model, ds, val_idx).accuracy();
    const double test_acc = evaluate(model, ds, test_idx).accuracy();
    report.add_row(epoch, "train", "all", train_acc, loss_sum / std::max(1LL, seen));
    report.add_row(epoch, "val", "all", val_acc, 0.0);
    report.add_row(epoch, "test", "all", test_acc, 0.0);
    val_history.push_back(val_acc);
    test_history.push_back(test_acc);
    if (val_acc > report.best_val_accuracy || report.best_epoch < 0) {
      report.best_val_accuracy = val_acc;
      report.best_epoch = epoch;
      best_state = model.snapshot();
    }
  }
  model.restore(best_state);
  report.final_test_accuracy = test_history[std::size_t(report.best_epoch)];
  finalize_convergence(report, val_history, steps_per_epoch);
  return report;
}

}  // namespace edgekt
