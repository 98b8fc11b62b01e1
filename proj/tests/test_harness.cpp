#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "petkit/train.hpp"

using petkit::BackboneConfig;
using petkit::Dataset;
using petkit::ExperimentSpec;
using petkit::PetStrategy;
using petkit::SyntheticTaskSpec;
using petkit::TaskModel;
using petkit::Tensor;
using petkit::TrainConfig;

namespace {

SyntheticTaskSpec tiny_task() {
  SyntheticTaskSpec t;
  t.n_classes = 3;
  t.samples_per_class = 10;
  t.wave_length = 120;
  t.snr_db = 30.0;
  t.seed = 5;
  return t;
}

ExperimentSpec tiny_experiment(PetStrategy strategy, int epochs = 2) {
  ExperimentSpec spec;
  spec.strategy = strategy;
  spec.task = tiny_task();
  spec.train.epochs = epochs;
  spec.train.batch_size = 8;
  spec.train.lr_grid = {1e-3};
  spec.train.seed = 3;
  return spec;
}

TEST(SyntheticData, DeterministicUnderSeed) {
  const auto a = petkit::gen_synthetic_dataset<double>(tiny_task());
  const auto b = petkit::gen_synthetic_dataset<double>(tiny_task());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].label, b.train[i].label);
    EXPECT_EQ(a.train[i].wave.data, b.train[i].wave.data);
  }
  SyntheticTaskSpec other = tiny_task();
  other.seed = 6;
  const auto c = petkit::gen_synthetic_dataset<double>(other);
  EXPECT_NE(a.train[0].wave.data, c.train[0].wave.data);
}

TEST(SyntheticData, SplitSizes) {
  SyntheticTaskSpec t;
  t.n_classes = 10;
  t.samples_per_class = 100;
  t.wave_length = 64;
  t.seed = 2;
  const auto data = petkit::gen_synthetic_dataset<double>(t);
  EXPECT_EQ(data.train.size(), 800u);
  EXPECT_EQ(data.val.size(), 100u);
  EXPECT_EQ(data.test.size(), 100u);
}

TEST(SyntheticData, RejectsDegenerateSpecs) {
  SyntheticTaskSpec t = tiny_task();
  t.n_classes = 1;
  EXPECT_THROW(petkit::gen_synthetic_dataset<double>(t), petkit::ConfigError);
}

// Noise-free classes must be separable by spectral shape alone: a
// nearest-centroid rule over DFT magnitudes, fit on train, must clear 90% on
// test. This bounds task difficulty before any model enters the picture.
TEST(SyntheticData, SpectralCentroidOracleSeparates) {
  SyntheticTaskSpec t;
  t.n_classes = 10;
  t.samples_per_class = 20;
  t.wave_length = 256;
  t.snr_db = std::numeric_limits<double>::infinity();
  t.seed = 11;
  const auto data = petkit::gen_synthetic_dataset<double>(t);

  const int bins = 48;
  std::map<int, std::vector<double>> centroids;
  std::map<int, int> counts;
  for (const auto& item : data.train) {
    std::vector<double> wave(item.wave.data.begin(), item.wave.data.end());
    const auto mag = oracles::dft_magnitude(wave, bins);
    auto& c = centroids[item.label];
    c.resize(bins, 0.0);
    for (int b = 0; b < bins; ++b) c[b] += mag[b];
    counts[item.label]++;
  }
  for (auto& [label, c] : centroids)
    for (double& v : c) v /= counts[label];

  int hits = 0;
  for (const auto& item : data.test) {
    std::vector<double> wave(item.wave.data.begin(), item.wave.data.end());
    const auto mag = oracles::dft_magnitude(wave, bins);
    int best = -1;
    double best_d = 0.0;
    for (const auto& [label, c] : centroids) {
      double d = 0.0;
      for (int b = 0; b < bins; ++b) d += (mag[b] - c[b]) * (mag[b] - c[b]);
      if (best < 0 || d < best_d) {
        best = label;
        best_d = d;
      }
    }
    if (best == item.label) ++hits;
  }
  EXPECT_GT(static_cast<double>(hits) / data.test.size(), 0.9);
}

TEST(SubsetTrain, BalancedPrefixAndErrors) {
  const auto data = petkit::gen_synthetic_dataset<double>(tiny_task());  // 8 train per class
  const auto half = petkit::subset_train(data, 3, 0.5);
  EXPECT_EQ(half.size(), 12u);  // 4 per class
  std::map<int, int> per_class;
  for (const auto* item : half) per_class[item->label]++;
  for (const auto& [label, n] : per_class) EXPECT_EQ(n, 4);
  EXPECT_THROW(petkit::subset_train(data, 3, 0.05), petkit::ConfigError);  // floor -> 0
  EXPECT_THROW(petkit::subset_train(data, 3, 1.5), petkit::ConfigError);
}

TEST(AttachHead, MiniHeadParameterCount) {
  auto spec = tiny_experiment(PetStrategy::frozen());
  spec.task.n_classes = 10;
  auto tm = petkit::make_task_model<double>(spec);
  EXPECT_EQ(tm.head_w.size() + tm.head_b.size(), 330u);  // 32*10 + 10
  EXPECT_TRUE(tm.head_w.trainable);
  EXPECT_TRUE(tm.head_b.trainable);
}

TEST(AttachHead, LogitShape) {
  auto tm = petkit::make_task_model<double>(tiny_experiment(PetStrategy::frozen()));
  petkit::Graph<double> g;
  const auto data = petkit::gen_synthetic_dataset<double>(tiny_task());
  const int logits = tm.logits(g, g.input(data.val[0].wave));
  EXPECT_EQ(g.shape(logits), (petkit::Shape{3}));
}

TEST(AttachHead, HeadKindMustMatchStrategy) {
  auto [ws_model, m1] = petkit::apply_strategy(
      petkit::build_backbone<double>(BackboneConfig::preset("mini"), 7),
      PetStrategy::weighted_sum(), 8);
  EXPECT_THROW(
      petkit::attach_head(std::move(ws_model), petkit::HeadKind::MeanPoolLinear, 4, 9),
      petkit::ConfigError);
  auto [frozen_model, m2] = petkit::apply_strategy(
      petkit::build_backbone<double>(BackboneConfig::preset("mini"), 7),
      PetStrategy::frozen(), 8);
  EXPECT_THROW(petkit::attach_head(std::move(frozen_model),
                                   petkit::HeadKind::WeightedSumMeanPoolLinear, 4, 9),
               petkit::ConfigError);
}

TEST(WeightedSumStrategy, TrainsEndToEnd) {
  auto spec = tiny_experiment(PetStrategy::weighted_sum(), 1);
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  auto tm = petkit::make_task_model<double>(spec);
  const auto before = tm.model.wsum.weights.data;
  auto record = petkit::train(tm, data, spec.train, 1e-2);
  EXPECT_NE(tm.model.wsum.weights.data, before);  // the 3 scalars moved
  EXPECT_EQ(record.trainable_total, 2);           // mini has 2 layers -> 2 scalars
}

TEST(Train, ZeroEpochsStaysAtChance) {
  auto spec = tiny_experiment(PetStrategy::frozen(), 0);
  spec.task.n_classes = 10;
  spec.task.samples_per_class = 20;
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  auto tm = petkit::make_task_model<double>(spec);
  const auto record = petkit::train(tm, data, spec.train, 1e-3);
  EXPECT_EQ(record.best_epoch, -1);
  EXPECT_TRUE(record.epochs.empty());
  // 20 test samples, chance 0.1: binomial noise keeps an untrained head
  // well under 0.4.
  EXPECT_LT(record.test_accuracy, 0.4);
}

TEST(Train, FrozenTensorsBitIdentical) {
  auto spec = tiny_experiment(PetStrategy::chapter(), 2);
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  auto tm = petkit::make_task_model<double>(spec);

  std::vector<std::vector<double>> before;
  std::vector<std::string> names;
  for (auto& np : tm.registry())
    if (!np.tensor->trainable) {
      before.push_back(np.tensor->data);
      names.push_back(np.tensor->name);
    }
  petkit::train(tm, data, spec.train, 1e-3);
  std::size_t i = 0;
  for (auto& np : tm.registry())
    if (!np.tensor->trainable) {
      EXPECT_EQ(np.tensor->data, before[i]) << names[i];
      ++i;
    }
}

TEST(Train, OnlyTrainableTensorsMove) {
  auto spec = tiny_experiment(PetStrategy::houlsby_only(), 1);
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  auto tm = petkit::make_task_model<double>(spec);
  std::map<std::string, std::vector<double>> before;
  for (auto& np : tm.registry()) before[np.tensor->name] = np.tensor->data;
  petkit::train(tm, data, spec.train, 1e-3);
  bool any_trainable_moved = false;
  for (auto& np : tm.registry()) {
    if (np.tensor->trainable) {
      if (np.tensor->data != before[np.tensor->name]) any_trainable_moved = true;
    } else {
      EXPECT_EQ(np.tensor->data, before[np.tensor->name]) << np.tensor->name;
    }
  }
  EXPECT_TRUE(any_trainable_moved);
}

TEST(Train, AdapterLogitsEqualFrozenLogitsAtStepZero) {
  auto frozen_spec = tiny_experiment(PetStrategy::frozen());
  auto chapter_spec = tiny_experiment(PetStrategy::chapter());
  auto frozen_tm = petkit::make_task_model<double>(frozen_spec);
  auto chapter_tm = petkit::make_task_model<double>(chapter_spec);
  const auto data = petkit::gen_synthetic_dataset<double>(frozen_spec.task);
  for (int i = 0; i < 3; ++i) {
    petkit::Graph<double> g1, g2;
    const int l1 = frozen_tm.logits(g1, g1.input(data.val[i].wave));
    const int l2 = chapter_tm.logits(g2, g2.input(data.val[i].wave));
    EXPECT_EQ(g1.value(l1), g2.value(l2));
  }
}

TEST(Train, AfterOneStepOutputsDiffer) {
  auto spec = tiny_experiment(PetStrategy::chapter(), 1);
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  auto tm = petkit::make_task_model<double>(spec);
  petkit::Graph<double> g0;
  const auto logits_before = g0.value(tm.logits(g0, g0.input(data.val[0].wave)));
  petkit::train(tm, data, spec.train, 1e-3);
  petkit::Graph<double> g1;
  const auto logits_after = g1.value(tm.logits(g1, g1.input(data.val[0].wave)));
  EXPECT_NE(logits_before, logits_after);
}

TEST(Train, DeterministicRunRecords) {
  auto spec = tiny_experiment(PetStrategy::houlsby_only(), 3);
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  auto run = [&] {
    auto tm = petkit::make_task_model<double>(spec);
    return petkit::train(tm, data, spec.train, 1e-3);
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss);
    EXPECT_EQ(a.epochs[i].val_accuracy, b.epochs[i].val_accuracy);
  }
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(a.test_accuracy, b.test_accuracy);
}

TEST(Train, DivergenceAborts) {
  auto spec = tiny_experiment(PetStrategy::fine_tune(), 50);
  spec.train.optimizer = petkit::OptimizerKind::SgdMomentum;
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  auto tm = petkit::make_task_model<double>(spec);
  EXPECT_THROW(petkit::train(tm, data, spec.train, 1e30), petkit::NumericError);
}

TEST(GridSearch, SingleElementGridReturnsThatRun) {
  auto spec = tiny_experiment(PetStrategy::frozen(), 1);
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  const auto result = petkit::lr_grid_search<double>(spec, data);
  EXPECT_EQ(result.all.size(), 1u);
  EXPECT_EQ(result.best.lr, 1e-3);
}

TEST(GridSearch, RecordsPerGridEntryAndDefaultGrid) {
  TrainConfig def;
  ASSERT_EQ(def.lr_grid.size(), 3u);
  EXPECT_EQ(def.lr_grid.front(), 1e-3);
  EXPECT_EQ(def.lr_grid.back(), 1e-5);

  auto spec = tiny_experiment(PetStrategy::frozen(), 1);
  spec.train.lr_grid = {1e-3, 1e-4, 1e-5};
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  const auto result = petkit::lr_grid_search<double>(spec, data);
  EXPECT_EQ(result.all.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(result.all[i].lr, spec.train.lr_grid[i]);
}

TEST(GridSearch, TiesBreakTowardSmallerLr) {
  // Zero epochs: every grid entry scores identically, so the smallest rate
  // must win.
  auto spec = tiny_experiment(PetStrategy::frozen(), 0);
  spec.train.lr_grid = {1e-3, 1e-5, 1e-4};
  const auto data = petkit::gen_synthetic_dataset<double>(spec.task);
  const auto result = petkit::lr_grid_search<double>(spec, data);
  EXPECT_EQ(result.best.lr, 1e-5);
}

TEST(Sweep, CellAndSummaryCounts) {
  auto spec = tiny_experiment(PetStrategy::frozen(), 1);
  const auto result = petkit::low_resource_sweep<double>(
      spec, {PetStrategy::frozen(), PetStrategy::houlsby_only()}, {1.0, 0.5}, {1, 2, 3});
  EXPECT_EQ(result.cells.size(), 2u * 2u * 3u);
  EXPECT_EQ(result.summary.size(), 2u * 2u);
  for (const auto& row : result.summary) EXPECT_EQ(row.n, 3);
}

TEST(Sweep, FullFractionCellReproducesGridSearch) {
  auto spec = tiny_experiment(PetStrategy::frozen(), 1);
  const std::uint64_t cell_seed = 21;
  const auto cell = petkit::run_sweep_cell<double>(spec, PetStrategy::frozen(), 1.0, cell_seed);

  ExperimentSpec derived = spec;
  derived.strategy = PetStrategy::frozen();
  derived.task.seed = petkit::mix_seed(spec.task.seed, cell_seed);
  derived.train.seed = petkit::mix_seed(spec.train.seed, cell_seed);
  derived.train.subset_fraction = 1.0;
  derived.adapter_seed = petkit::mix_seed(spec.adapter_seed, cell_seed);
  derived.head_seed = petkit::mix_seed(spec.head_seed, cell_seed);
  const auto data = petkit::gen_synthetic_dataset<double>(derived.task);
  const auto direct = petkit::lr_grid_search<double>(derived, data);

  EXPECT_EQ(cell.best.lr, direct.best.lr);
  EXPECT_EQ(cell.best.val_accuracy, direct.best.val_accuracy);
  EXPECT_EQ(cell.best.test_accuracy, direct.best.test_accuracy);
  ASSERT_EQ(cell.best.epochs.size(), direct.best.epochs.size());
  for (std::size_t i = 0; i < cell.best.epochs.size(); ++i)
    EXPECT_EQ(cell.best.epochs[i].train_loss, direct.best.epochs[i].train_loss);
}

TEST(Sweep, RejectsBadFractions) {
  auto spec = tiny_experiment(PetStrategy::frozen(), 1);
  EXPECT_THROW(
      petkit::low_resource_sweep<double>(spec, {PetStrategy::frozen()}, {0.0}, {1}),
      petkit::ConfigError);
  EXPECT_THROW(
      petkit::low_resource_sweep<double>(spec, {PetStrategy::frozen()}, {1.2}, {1}),
      petkit::ConfigError);
}

// The learning-capacity anchor: a frozen random backbone with a linear head
// must beat chance on an easy 4-class task within 30 epochs. Calibrated on
// this fixed seed pair (test accuracy 0.35 at lr 1e-3).
TEST(Train, FrozenBeatsChanceOnEasyTask) {
  ExperimentSpec spec;
  spec.strategy = PetStrategy::frozen();
  spec.task.n_classes = 4;
  spec.task.samples_per_class = 50;
  spec.task.wave_length = 800;
  spec.task.snr_db = 30.0;
  spec.task.seed = 17;
  spec.train.epochs = 30;
  spec.train.lr_grid = {1e-3};
  spec.train.seed = 18;
  const auto data = petkit::gen_synthetic_dataset<float>(spec.task);
  auto tm = petkit::make_task_model<float>(spec);
  const auto record = petkit::train(tm, data, spec.train, 1e-3);
  EXPECT_GT(record.test_accuracy, 0.25);
}

}  // namespace
