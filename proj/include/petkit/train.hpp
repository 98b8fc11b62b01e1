// petkit/train.hpp
//
// Copyright 2026 the petkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef PETKIT_TRAIN_HPP
#define PETKIT_TRAIN_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "petkit/accounting.hpp"
#include "petkit/strategy.hpp"
#include "petkit/synthetic.hpp"

namespace petkit {

enum class HeadKind { MeanPoolLinear, WeightedSumMeanPoolLinear };

inline HeadKind default_head_for(const PetStrategy& strategy) {
  return strategy.kind == StrategyKind::WeightedSum ? HeadKind::WeightedSumMeanPoolLinear
                                                    : HeadKind::MeanPoolLinear;
}

// Injected model plus a mean-pool linear classifier.
template <typename Real>
struct TaskModel {
  InjectedModel<Real> model;
  HeadKind head_kind = HeadKind::MeanPoolLinear;
  int n_classes = 0;
  Tensor<Real> head_w;  // [hidden, n_classes]
  Tensor<Real> head_b;  // [n_classes]

  int logits(Graph<Real>& g, int wave) {
    const int rep = model.forward_representation(g, wave);
    const int pooled = g.mean_rows(rep);
    return g.linear(pooled, g.param(head_w), g.param(head_b));
  }

  std::vector<NamedParam<Real>> registry() {
    auto out = model.registry();
    out.push_back({"head", &head_w, true, false});
    out.push_back({"head", &head_b, false, false});
    return out;
  }

  std::vector<Tensor<Real>*> trainable_params() {
    std::vector<Tensor<Real>*> out;
    for (auto& np : registry())
      if (np.tensor->trainable) out.push_back(np.tensor);
    return out;
  }

  long long upstream_trainable_total(Convention convention) {
    return count_params(model, convention).trainable_total;
  }
};

// Head parameters are always trainable regardless of strategy.
template <typename Real>
TaskModel<Real> attach_head(InjectedModel<Real> model, HeadKind kind, int n_classes,
                            std::uint64_t seed) {
  if (kind == HeadKind::WeightedSumMeanPoolLinear &&
      model.strategy.kind != StrategyKind::WeightedSum)
    throw ConfigError("weighted-sum head requires the weighted_sum strategy");
  if (kind == HeadKind::MeanPoolLinear && model.strategy.kind == StrategyKind::WeightedSum)
    throw ConfigError("weighted_sum strategy requires the weighted-sum head");
  if (n_classes < 2) throw ConfigError("attach_head: need at least 2 classes");
  TaskModel<Real> tm;
  tm.model = std::move(model);
  tm.head_kind = kind;
  tm.n_classes = n_classes;
  const int hidden = tm.model.backbone.config.hidden;
  Rng rng(mix_seed(seed, 0x4EAD));
  tm.head_w = Tensor<Real>::gaussian({hidden, n_classes}, rng,
                                     1.0 / std::sqrt(static_cast<double>(hidden)), "head.w");
  tm.head_b = Tensor<Real>::zeros({n_classes}, "head.b");
  tm.head_w.trainable = true;
  tm.head_b.trainable = true;
  return tm;
}

// ---- optimizers -------------------------------------------------------------

enum class OptimizerKind { SgdMomentum, Adam };

inline OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "sgd" || s == "sgd-momentum") return OptimizerKind::SgdMomentum;
  if (s == "adam" || s == "adaptive") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

// Updates trainable tensors in place from their grad buffers; never touches
// frozen tensors. State slots follow the parameter list order.
template <typename Real>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void step(const std::vector<Tensor<Real>*>& params) {
    if (state_m_.empty()) {
      state_m_.resize(params.size());
      state_v_.resize(params.size());
    }
    if (state_m_.size() != params.size())
      throw ConfigError("optimizer: parameter list changed between steps");
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<Real>* p = params[i];
      if (!p->trainable || p->grad.empty()) continue;
      auto& m = state_m_[i];
      if (m.size() != p->data.size()) m.assign(p->data.size(), Real(0));
      if (kind_ == OptimizerKind::SgdMomentum) {
        for (std::size_t j = 0; j < p->data.size(); ++j) {
          m[j] = Real(0.9) * m[j] + p->grad[j];
          p->data[j] -= static_cast<Real>(lr_) * m[j];
        }
      } else {
        auto& v = state_v_[i];
        if (v.size() != p->data.size()) v.assign(p->data.size(), Real(0));
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double mc = 1.0 - std::pow(b1, t_);
        const double vc = 1.0 - std::pow(b2, t_);
        for (std::size_t j = 0; j < p->data.size(); ++j) {
          const double gj = p->grad[j];
          m[j] = static_cast<Real>(b1 * m[j] + (1.0 - b1) * gj);
          v[j] = static_cast<Real>(b2 * v[j] + (1.0 - b2) * gj * gj);
          const double mhat = m[j] / mc;
          const double vhat = v[j] / vc;
          p->data[j] -= static_cast<Real>(lr_ * mhat / (std::sqrt(vhat) + eps));
        }
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  int t_ = 0;
  std::vector<std::vector<Real>> state_m_, state_v_;
};

// ---- training ---------------------------------------------------------------

struct TrainConfig {
  std::vector<double> lr_grid = {1e-3, 1e-4, 1e-5};
  int epochs = 50;
  int batch_size = 8;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 1;
  double subset_fraction = 1.0;
};

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

// One training run. Test accuracy is read exactly once, at the
// best-validation checkpoint. wall_ms is kept out of the metric files so
// identical configs produce identical records.
struct RunRecord {
  std::string strategy;
  double lr = 0.0;
  std::uint64_t seed = 0;
  double subset_fraction = 1.0;
  long long trainable_total = 0;  // upstream, all-params convention
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // -1 when epochs == 0
  double val_accuracy = 0.0;
  double train_accuracy = 0.0;  // on the training subset, at best checkpoint
  double test_accuracy = 0.0;
  double wall_ms = 0.0;
};

template <typename Real>
double evaluate_accuracy(TaskModel<Real>& tm,
                         const std::vector<const LabeledWave<Real>*>& items) {
  if (items.empty()) return 0.0;
  int hits = 0;
  for (const auto* item : items) {
    Graph<Real> g;
    const int logits = tm.logits(g, g.input(item->wave));
    const auto& v = g.value(logits);
    int arg = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
      if (v[k] > v[arg]) arg = static_cast<int>(k);
    if (arg == item->label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

template <typename Real>
std::vector<const LabeledWave<Real>*> pointer_view(const std::vector<LabeledWave<Real>>& v) {
  std::vector<const LabeledWave<Real>*> out;
  out.reserve(v.size());
  for (const auto& item : v) out.push_back(&item);
  return out;
}

template <typename Real>
RunRecord train(TaskModel<Real>& tm, const Dataset<Real>& data, const TrainConfig& config,
                double lr) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord record;
  record.strategy = tm.model.strategy.name();
  record.lr = lr;
  record.seed = config.seed;
  record.subset_fraction = config.subset_fraction;
  record.trainable_total = tm.upstream_trainable_total(Convention::AllParams);

  auto train_items = subset_train(data, tm.n_classes, config.subset_fraction);
  const auto val_items = pointer_view(data.val);
  const auto test_items = pointer_view(data.test);
  const auto params = tm.trainable_params();
  Optimizer<Real> optimizer(config.optimizer, lr);

  // Snapshot of the trainable state at the best validation epoch.
  std::vector<std::vector<Real>> best_state;
  auto snapshot = [&] {
    best_state.clear();
    for (auto* p : params) best_state.push_back(p->data);
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->data = best_state[i];
  };
  snapshot();  // epoch -1 state; only used if epochs == 0

  double best_val = -1.0;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config.seed, 0xE90C + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(train_items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    double loss_sum = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Graph<Real> g;
      std::vector<int> losses;
      for (std::size_t i = start; i < end; ++i) {
        const auto* item = train_items[order[i]];
        losses.push_back(
            g.softmax_cross_entropy(tm.logits(g, g.input(item->wave)), item->label));
      }
      const int loss = g.average(losses);
      const double loss_value = g.value(loss)[0];
      if (!std::isfinite(loss_value))
        throw NumericError("training diverged: non-finite loss at step " +
                           std::to_string(step) + " (lr=" + std::to_string(lr) + ")");
      for (auto* p : params) {
        p->ensure_grad();
        p->zero_grad();
      }
      g.backward(loss);
      optimizer.step(params);
      loss_sum += loss_value;
      ++batches;
      ++step;
    }

    EpochStats stats;
    stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    stats.val_accuracy = evaluate_accuracy(tm, val_items);
    record.epochs.push_back(stats);
    if (stats.val_accuracy > best_val) {  // ties keep the earliest epoch
      best_val = stats.val_accuracy;
      record.best_epoch = epoch;
      snapshot();
    }
  }

  restore();
  record.val_accuracy = std::max(best_val, 0.0);
  record.train_accuracy = evaluate_accuracy(tm, train_items);
  record.test_accuracy = evaluate_accuracy(tm, test_items);
  record.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return record;
}

// ---- experiment wiring -------------------------------------------------------

// Everything needed to reproduce one run end to end.
struct ExperimentSpec {
  BackboneConfig backbone = BackboneConfig::preset("mini");
  PetStrategy strategy;
  SyntheticTaskSpec task;
  TrainConfig train;
  std::uint64_t backbone_seed = 7;
  std::uint64_t adapter_seed = 8;
  std::uint64_t head_seed = 9;
};

template <typename Real>
TaskModel<Real> make_task_model(const ExperimentSpec& spec) {
  auto [model, mask] = apply_strategy(build_backbone<Real>(spec.backbone, spec.backbone_seed),
                                      spec.strategy, spec.adapter_seed);
  return attach_head(std::move(model), default_head_for(spec.strategy), spec.task.n_classes,
                     spec.head_seed);
}

template <typename Real>
struct GridResult {
  RunRecord best;
  std::vector<RunRecord> all;  // one per grid entry, grid order
};

// Trains a fresh model per learning rate; best = highest validation
// accuracy, ties broken toward the smaller rate.
template <typename Real>
GridResult<Real> lr_grid_search(const ExperimentSpec& spec, const Dataset<Real>& data) {
  if (spec.train.lr_grid.empty()) throw ConfigError("lr grid must be non-empty");
  GridResult<Real> result;
  result.all.resize(spec.train.lr_grid.size());

  // Grid cells are independent and deterministic, so running them on threads
  // changes wall time only.
  const unsigned jobs =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                      static_cast<unsigned>(spec.train.lr_grid.size())));
  std::vector<std::thread> pool;
  std::atomic<std::size_t> cursor{0};
  std::vector<std::exception_ptr> errors(spec.train.lr_grid.size());
  for (unsigned j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = cursor.fetch_add(1);
        if (i >= spec.train.lr_grid.size()) return;
        try {
          auto tm = make_task_model<Real>(spec);
          result.all[i] = train(tm, data, spec.train, spec.train.lr_grid[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.all.size(); ++i) {
    const auto& a = result.all[i];
    const auto& b = result.all[best];
    if (a.val_accuracy > b.val_accuracy || (a.val_accuracy == b.val_accuracy && a.lr < b.lr))
      best = i;
  }
  result.best = result.all[best];
  return result;
}

// ---- low-resource sweep ------------------------------------------------------

struct SweepCell {
  std::string strategy;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  RunRecord best;
};

struct SweepSummaryRow {
  std::string strategy;
  double fraction = 1.0;
  int n = 0;
  double mean_test_accuracy = 0.0;
  double sd_test_accuracy = 0.0;
  double mean_gap = 0.0;  // train - test accuracy at best checkpoint
  double sd_gap = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepSummaryRow> summary;
};

// One sweep cell, a pure function of (spec, strategy, fraction, seed):
// dataset draws, adapter/head init and training order all derive from the
// cell seed; the backbone stays the configured one.
template <typename Real>
SweepCell run_sweep_cell(ExperimentSpec spec, const PetStrategy& strategy, double fraction,
                         std::uint64_t cell_seed) {
  spec.strategy = strategy;
  spec.task.seed = mix_seed(spec.task.seed, cell_seed);
  spec.train.seed = mix_seed(spec.train.seed, cell_seed);
  spec.train.subset_fraction = fraction;
  spec.adapter_seed = mix_seed(spec.adapter_seed, cell_seed);
  spec.head_seed = mix_seed(spec.head_seed, cell_seed);
  const auto data = gen_synthetic_dataset<Real>(spec.task);
  SweepCell cell;
  cell.strategy = strategy.name();
  cell.fraction = fraction;
  cell.seed = cell_seed;
  cell.best = lr_grid_search<Real>(spec, data).best;
  return cell;
}

template <typename Real>
SweepResult low_resource_sweep(const ExperimentSpec& spec,
                               const std::vector<PetStrategy>& strategies,
                               const std::vector<double>& fractions,
                               const std::vector<std::uint64_t>& seeds) {
  if (strategies.empty() || fractions.empty() || seeds.empty())
    throw ConfigError("sweep: strategies, fractions and seeds must be non-empty");
  for (double f : fractions)
    if (f <= 0.0 || f > 1.0) throw ConfigError("sweep: fractions must be in (0, 1]");

  SweepResult result;
  for (const auto& strategy : strategies)
    for (double fraction : fractions)
      for (std::uint64_t seed : seeds)
        result.cells.push_back(run_sweep_cell<Real>(spec, strategy, fraction, seed));

  for (const auto& strategy : strategies) {
    for (double fraction : fractions) {
      SweepSummaryRow row;
      row.strategy = strategy.name();
      row.fraction = fraction;
      std::vector<double> accs, gaps;
      for (const auto& cell : result.cells)
        if (cell.strategy == row.strategy && cell.fraction == fraction) {
          accs.push_back(cell.best.test_accuracy);
          gaps.push_back(cell.best.train_accuracy - cell.best.test_accuracy);
        }
      row.n = static_cast<int>(accs.size());
      auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
      };
      auto sd = [&](const std::vector<double>& v, double m) {
        if (v.size() < 2) return 0.0;
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
      };
      row.mean_test_accuracy = mean(accs);
      row.sd_test_accuracy = sd(accs, row.mean_test_accuracy);
      row.mean_gap = mean(gaps);
      row.sd_gap = sd(gaps, row.mean_gap);
      result.summary.push_back(row);
    }
  }
  return result;
}

}  // namespace petkit

#endif  // PETKIT_TRAIN_HPP
