#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "finder/finder.hpp"
#include "support/graphs.hpp"
#include "support/synthetic.hpp"

using namespace finder;

namespace {

std::vector<const Sample*> pointers(const std::vector<Sample>& s) {
  std::vector<const Sample*> out;
  for (const auto& x : s) out.push_back(&x);
  return out;
}

}  // namespace

TEST(Split, PresetsAndDisjointCover) {
  for (const char* name : {"default", "matbench", "matbench-nested"}) {
    auto s = split(1000, split_preset(name), 42);
    std::set<std::size_t> all;
    for (auto* part : {&s.train, &s.val, &s.test})
      for (auto i : *part) EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(all.size(), 1000u);
  }
  auto d = split(1000, split_preset("default"), 1);
  EXPECT_EQ(d.train.size(), 700u);
  EXPECT_EQ(d.val.size(), 150u);
  auto m = split(1000, split_preset("matbench-nested"), 1);
  EXPECT_EQ(m.train.size(), 720u);
  EXPECT_EQ(m.val.size(), 80u);
  EXPECT_EQ(m.test.size(), 200u);
  EXPECT_THROW(split_preset("nope"), std::invalid_argument);
  EXPECT_THROW(split(3, split_preset("default"), 1), std::invalid_argument);
  EXPECT_THROW(split(10, SplitRatios{0.5, 0.5, 0.5}, 1), std::invalid_argument);
}

TEST(Split, SeedDeterminesPermutation) {
  auto a = split(500, split_preset("default"), 7);
  auto b = split(500, split_preset("default"), 7);
  auto c = split(500, split_preset("default"), 8);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.train, c.train);
}

TEST(Normalizer, PopulationStatistics) {
  std::vector<Sample> s(4);
  const double ys[] = {1, 2, 3, 6};
  for (int i = 0; i < 4; ++i) s[i].target = {ys[i]};
  auto z = Normalizer::fit(pointers(s));
  EXPECT_DOUBLE_EQ(z.mean, 3.0);
  EXPECT_DOUBLE_EQ(z.stddev, std::sqrt((4.0 + 1.0 + 0.0 + 9.0) / 4.0));
  EXPECT_DOUBLE_EQ(z.denormalize(z.normalize(4.2)), 4.2);
  for (auto& x : s) x.target = {1.0};
  EXPECT_THROW(Normalizer::fit(pointers(s)), std::invalid_argument);
}

TEST(Metrics, MatchHandComputation) {
  std::vector<std::vector<double>> y{{1}, {2}, {3}, {4}}, p{{1.5}, {2}, {2}, {4.5}};
  auto m = compute_metrics(y, p);
  // errors 0.5 0 1 0.5
  EXPECT_DOUBLE_EQ(m.mae, 0.5);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt(1.5 / 4));
  EXPECT_DOUBLE_EQ(m.r2, 1.0 - 1.5 / 5.0);
  EXPECT_DOUBLE_EQ(m.mad_mae, 1.0 / 0.5);
  EXPECT_EQ(m.abs_error.size(), 4u);
  EXPECT_THROW(compute_metrics({}, {}), std::invalid_argument);
}

TEST(LearningCurve, LogLogSlope) {
  // mae = 3 n^-0.21
  std::vector<double> n{100, 1000, 10000}, mae;
  for (double x : n) mae.push_back(3 * std::pow(x, -0.21));
  EXPECT_NEAR(log_log_slope(n, mae), -0.21, 1e-12);
  EXPECT_THROW(log_log_slope({1}, {1}), std::invalid_argument);
}

TEST(Train, LossFallsAndBestParametersRestored) {
  const auto table = one_hot_embeddings();
  auto samples = finder::testing::electronegativity_task(60, 3, table);
  auto all = pointers(samples);
  std::vector<const Sample*> tr(all.begin(), all.begin() + 40), va(all.begin() + 40, all.end());
  auto cfg = finder::testing::tiny_config(103, Domain::kFormula);
  cfg.node_dim = cfg.key_dim = 16;
  FinderModel<double> model(cfg);
  auto z = Normalizer::fit(tr);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 15;
  tc.adam.base_lr = 3e-3;
  std::vector<EpochRecord> seen;
  auto r = train(model, tr, va, tc, z, [&](const EpochRecord& e) { seen.push_back(e); });
  ASSERT_EQ(r.history.size(), seen.size());
  EXPECT_FALSE(r.aborted);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  // Restored parameters reproduce the best validation MAE.
  EXPECT_NEAR(evaluate(model, va, z).mae, r.best_val_mae, 1e-12);
  const double lr_after = 3e-3 * std::pow(0.999, 15 * 5);
  EXPECT_NEAR(r.history.back().lr, lr_after, 1e-15);
}

TEST(Train, StopsOnPatienceTargetAndBudget) {
  const auto table = one_hot_embeddings();
  auto samples = finder::testing::electronegativity_task(30, 4, table);
  auto all = pointers(samples);
  auto cfg = finder::testing::tiny_config(103, Domain::kFormula);
  auto z = Normalizer::fit(all);
  TrainConfig tc;
  tc.batch_size = 10;
  tc.max_epochs = 50;

  tc.target_val_mae = 1e9;
  FinderModel<double> a(cfg);
  auto ra = train(a, all, all, tc, z);
  EXPECT_EQ(ra.stop_reason, "target");
  EXPECT_EQ(ra.history.size(), 1u);

  tc.target_val_mae = 0.0;
  tc.time_budget_seconds = 1e-9;
  FinderModel<double> b(cfg);
  EXPECT_EQ(train(b, all, all, tc, z).stop_reason, "time budget");

  tc.time_budget_seconds = 0.0;
  tc.patience = 1;
  tc.adam.base_lr = 1e-12;  // below float resolution: parameters never move
  FinderModel<float> c(cfg);
  auto rc = train(c, all, all, tc, z);
  EXPECT_EQ(rc.stop_reason, "patience");
  EXPECT_EQ(rc.history.size(), 2u);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto table = one_hot_embeddings();
  auto samples = finder::testing::electronegativity_task(40, 5, table);
  auto all = pointers(samples);
  std::vector<const Sample*> tr(all.begin(), all.begin() + 30), va(all.begin() + 30, all.end());
  auto cfg = finder::testing::tiny_config(103, Domain::kFormula);
  auto z = Normalizer::fit(tr);
  TrainConfig tc;
  tc.batch_size = 7;
  tc.max_epochs = 4;
  FinderModel<float> m1(cfg), m2(cfg);
  auto r1 = train(m1, tr, va, tc, z);
  auto r2 = train(m2, tr, va, tc, z);
  ASSERT_EQ(r1.history.size(), r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    EXPECT_EQ(r1.history[i].train_loss, r2.history[i].train_loss);
    EXPECT_EQ(r1.history[i].val_mae, r2.history[i].val_mae);
  }
}

TEST(Train, RejectsEmptySets) {
  FinderModel<double> model(finder::testing::tiny_config(103, Domain::kFormula));
  TrainConfig tc;
  EXPECT_THROW(train(model, {}, {}, tc, Normalizer{}), std::invalid_argument);
}

TEST(Train, TargetWidthMismatchIsShapeError) {
  auto samples = finder::testing::electronegativity_task(4, 1, one_hot_embeddings());
  samples[2].target = {1, 2};
  auto all = pointers(samples);
  FinderModel<double> model(finder::testing::tiny_config(103, Domain::kFormula));
  TrainConfig tc;
  tc.max_epochs = 1;
  EXPECT_THROW(train(model, all, all, tc, Normalizer{0, 1}), ShapeError);
}
