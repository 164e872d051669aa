#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gradcheck.hpp"
#include "rceed/errors.hpp"
#include "rceed/training.hpp"

namespace rceed {
namespace {

using testing::random_tensor;

// ---- cross-entropy ------------------------------------------------------------

TEST(CrossEntropy, UniformLogitsGiveLogClassCount) {
  auto logits = Tensor<double>::zeros({4, 63});
  auto loss = cross_entropy(logits, {0, 5, 62, 30});
  EXPECT_NEAR(loss.item(), std::log(63.0), 1e-12);
  EXPECT_NEAR(loss.item(), 4.143, 1e-3);
}

TEST(CrossEntropy, SaturatedCorrectPredictionIsNearZero) {
  auto logits = Tensor<double>::zeros({3, 63});
  const std::vector<std::size_t> targets{1, 2, 62};
  for (std::size_t t = 0; t < 3; ++t) logits[t * 63 + targets[t]] = 100.0;
  EXPECT_LT(cross_entropy(logits, targets).item(), 1e-6);
}

TEST(CrossEntropy, DecreasesAsTargetLogitRises) {
  auto logits = random_tensor({2, 63}, 1);
  double previous = cross_entropy(logits, {7, 9}).item();
  for (int k = 0; k < 5; ++k) {
    logits[7] += 0.5;
    const double now = cross_entropy(logits, {7, 9}).item();
    EXPECT_LT(now, previous);
    previous = now;
  }
}

TEST(CrossEntropy, RejectsBadTargets) {
  auto logits = Tensor<double>::zeros({2, 63});
  EXPECT_THROW(cross_entropy(logits, {1}), InputError);
  EXPECT_THROW(cross_entropy(logits, {1, 63}), InputError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  auto logits = random_tensor({3, 63}, 2, -2, 2);
  auto r = testing::check_gradients([&] { return cross_entropy(logits, {4, 62, 0}); },
                                    {{"logits", logits}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

// ---- L2 -------------------------------------------------------------------------

TEST(L2Penalty, WeightsOnly) {
  ParameterStore<double> store;
  auto w = store.create("w", Shape{2, 2}, ParamRole::kWeight);
  auto g = store.create("g", Shape{2}, ParamRole::kGain);
  auto b = store.create("b", Shape{2}, ParamRole::kBias);
  auto e = store.create("e", Shape{3, 2}, ParamRole::kEmbedding);
  EXPECT_EQ(l2_penalty(store).item(), 0.0);
  w[0] = 1;
  w[1] = -2;
  w[3] = 3;
  g[0] = 10;
  b[1] = 10;
  e[4] = 10;
  EXPECT_DOUBLE_EQ(l2_penalty(store).item(), 14.0);
}

TEST(L2Penalty, IndependentOfDropoutMasks) {
  Model<double> model(ModelConfig::micro(), 1);
  auto image = random_tensor({16, 32, 1}, 2, 0, 1).cast<float>();
  LabeledSample sample{image, "ab"};
  Rng r1(1), r2(2);
  auto a = batch_loss(model, {&sample}, 1e-4, Mode::kTrain, r1);
  auto b = batch_loss(model, {&sample}, 1e-4, Mode::kTrain, r2);
  EXPECT_EQ(a.values.l2, b.values.l2);
  EXPECT_NE(a.values.cross_entropy, b.values.cross_entropy);
  EXPECT_GE(a.values.l2, 0.0);
  EXPECT_GE(a.values.cross_entropy, 0.0);
  EXPECT_NEAR(a.values.total, a.values.cross_entropy + 1e-4 * a.values.l2, 1e-12);
}

// ---- Adam ----------------------------------------------------------------------

TEST(Adam, MinimizesSquare) {
  ParameterStore<double> store;
  auto x = store.create("x", Shape{1}, ParamRole::kWeight);
  x[0] = 1.0;
  Adam<double> adam;
  std::size_t steps = 0;
  while (std::abs(x[0]) >= 0.05 && steps < 200) {
    x.mutable_grad()[0] = 2 * x[0];
    adam.step(store, 0.1);
    ++steps;
  }
  EXPECT_LT(std::abs(x[0]), 0.05);
  EXPECT_LE(steps, 200u);
  EXPECT_EQ(adam.steps(), steps);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore<double> store;
  auto p = store.create("p", Shape{5}, ParamRole::kWeight);
  const std::vector<double> grads{3.0, -1e-3, 42.0, -7.5, 0.25};
  for (std::size_t i = 0; i < 5; ++i) p.mutable_grad()[i] = grads[i];
  Adam<double> adam;
  adam.step(store, 0.01);
  for (std::size_t i = 0; i < 5; ++i) {
    const double expected = grads[i] > 0 ? -0.01 : 0.01;
    // epsilon perturbs the ratio by at most 1e-8 / |g|
    EXPECT_NEAR(p[i], expected, 1e-7) << i;
  }
  ASSERT_EQ(adam.first_moments().size(), 1u);
  EXPECT_EQ(adam.first_moments()[0].size(), 5u);
  EXPECT_EQ(adam.second_moments()[0].size(), 5u);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  ParameterStore<double> store;
  auto a = store.create("a", Shape{2}, ParamRole::kWeight);
  auto b = store.create("b", Shape{2}, ParamRole::kWeight);
  a[0] = 0.5;
  b[0] = 0.5;
  a.mutable_grad()[0] = 1.0;
  Adam<double> adam;
  adam.step(store, 0.1);
  EXPECT_NE(a[0], 0.5);
  EXPECT_EQ(b[0], 0.5);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParameterStore<float> store;
  auto a = store.create("first", Shape{2}, ParamRole::kWeight);
  auto b = store.create("culprit.weight", Shape{3}, ParamRole::kWeight);
  a.mutable_grad()[0] = 1.0f;
  b.mutable_grad()[2] = std::nanf("");
  Adam<float> adam;
  try {
    adam.step(store, 0.1);
    FAIL() << "NaN gradient accepted";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("culprit.weight"), std::string::npos) << e.what();
  }
  EXPECT_EQ(a[0], 0.0f);
  b.mutable_grad()[2] = INFINITY;
  EXPECT_THROW(adam.step(store, 0.1), TrainingError);
}

// ---- schedule / clipping ----------------------------------------------------------

TEST(Schedule, TwoPhaseStepFunction) {
  Schedule s{1e-4, 1e-5, 0.9};
  EXPECT_EQ(s.rate(0, 1000), 1e-4);
  EXPECT_EQ(s.rate(899, 1000), 1e-4);
  EXPECT_EQ(s.rate(900, 1000), 1e-5);
  EXPECT_EQ(s.rate(999, 1000), 1e-5);
  double previous = 1.0;
  for (std::size_t step = 0; step < 100; ++step) {
    EXPECT_LE(s.rate(step, 100), previous);
    previous = s.rate(step, 100);
  }
  TrainConfig cfg;
  EXPECT_EQ(cfg.schedule().base, 1e-4);
  EXPECT_NEAR(cfg.schedule().final, 1e-5, 1e-20);
  EXPECT_EQ(cfg.schedule().switch_fraction, 0.9);
  EXPECT_EQ(cfg.l2, 1e-4);
}

TEST(ClipGradients, RescalesToMaxNorm) {
  ParameterStore<double> store;
  auto a = store.create("a", Shape{2}, ParamRole::kWeight);
  auto b = store.create("b", Shape{1}, ParamRole::kBias);
  a.mutable_grad()[0] = 3;
  a.mutable_grad()[1] = 0;
  b.mutable_grad()[0] = 4;
  EXPECT_DOUBLE_EQ(clip_gradients(store, 10.0), 5.0);
  EXPECT_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_gradients(store, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

// ---- trainer ------------------------------------------------------------------

std::vector<LabeledSample> tiny_dataset(std::size_t n, std::size_t height, std::size_t width,
                                        std::uint64_t seed) {
  std::vector<LabeledSample> data;
  const std::string labels[] = {"a", "B7", "x", "Qz", "9"};
  for (std::size_t i = 0; i < n; ++i)
    data.push_back({random_tensor({height, width, 1}, seed + i, 0, 1).cast<float>(), labels[i % 5]});
  return data;
}

TEST(Trainer, SmallStepDecreasesLossOnDeskModel) {
  // Dropout off so the training objective and the evaluated loss coincide.
  auto mcfg = ModelConfig::desk();
  mcfg.encoder_dropout = 0.0;
  mcfg.decoder_dropout = 0.0;
  Model<float> model(mcfg, 11);
  auto data = generate_dataset(2, DatasetSpec{}, 5);
  std::vector<const LabeledSample*> batch{&data[0], &data[1]};
  auto loss = [&] {
    Rng rng(0);
    return batch_loss(model, batch, 1e-4, Mode::kEval, rng).values.total;
  };
  const double before = loss();
  TrainConfig cfg;
  cfg.learning_rate = 1e-5;
  cfg.steps = 1;
  cfg.seed = 3;
  Trainer<float> trainer(model, cfg);
  const auto report = trainer.step(batch);
  EXPECT_NEAR(report.loss.total, before, 1e-4 * before);
  EXPECT_LT(loss(), before);
}

TEST(Trainer, ReportsAndLogsEachStep) {
  Model<float> model(ModelConfig::micro(), 2);
  auto data = tiny_dataset(5, 16, 32, 100);
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch = 2;
  cfg.learning_rate = 1e-3;
  Trainer<float> trainer(model, cfg);
  std::vector<StepReport> reports;
  trainer.run(data, [&](const StepReport& r) { reports.push_back(r); });
  ASSERT_EQ(reports.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(reports[i].step, i + 1);
    EXPECT_TRUE(std::isfinite(reports[i].loss.total));
  }
  EXPECT_EQ(reports[0].learning_rate, 1e-3);
  EXPECT_EQ(reports[8].learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(reports[9].learning_rate, 1e-4);
  EXPECT_EQ(trainer.steps_taken(), 10u);

  std::ostringstream log;
  write_log_header(log);
  write_log_line(log, reports[0]);
  std::istringstream lines(log.str());
  std::string header, line;
  std::getline(lines, header);
  std::getline(lines, line);
  EXPECT_EQ(header, "step\tlr\tce\tl2\ttotal\telapsed");
  EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 5);
  EXPECT_EQ(line.substr(0, 2), "1\t");
}

TEST(Trainer, SeedPinnedRunsAreIdentical) {
  auto data = tiny_dataset(6, 16, 32, 200);
  auto run = [&](bool prefetch) {
    Model<float> model(ModelConfig::micro(), 4);
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.learning_rate = 1e-3;
    cfg.prefetch = prefetch;
    Trainer<float> trainer(model, cfg);
    std::vector<double> losses;
    trainer.run(data, [&](const StepReport& r) { losses.push_back(r.loss.total); });
    std::vector<float> params;
    for (const auto& p : model.parameters().all())
      params.insert(params.end(), p.value.data().begin(), p.value.data().end());
    return std::make_pair(losses, params);
  };
  auto a = run(false);
  auto b = run(false);
  auto c = run(true);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first, c.first);
  EXPECT_EQ(a.second, c.second);
}

TEST(Trainer, RejectsBadConfiguration) {
  Model<float> model(ModelConfig::micro(), 1);
  TrainConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(Trainer<float>(model, cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.batch = 0;
  EXPECT_THROW(Trainer<float>(model, cfg), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0;
  EXPECT_THROW(Trainer<float>(model, cfg), ConfigError);
  Trainer<float> ok(model, TrainConfig{});
  EXPECT_THROW(ok.run({}), InputError);
}

TEST(BatchPlan, EpochsCoverEveryIndex) {
  auto plan = batch_plan(10, 4, 5, 9);
  ASSERT_EQ(plan.size(), 5u);
  std::vector<std::size_t> flat;
  for (const auto& b : plan) {
    EXPECT_EQ(b.size(), 4u);
    flat.insert(flat.end(), b.begin(), b.end());
  }
  std::vector<std::size_t> first(flat.begin(), flat.begin() + 10);
  std::sort(first.begin(), first.end());
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(first, all);
  EXPECT_EQ(batch_plan(10, 4, 5, 9), plan);
  EXPECT_NE(batch_plan(10, 4, 5, 10), plan);
  EXPECT_EQ(batch_plan(3, 8, 1, 1).front().size(), 3u);
}

// ---- evaluation ------------------------------------------------------------------

TEST(Evaluate, ExactMatchFraction) {
  Model<float> model(ModelConfig::micro(), 6);
  auto data = tiny_dataset(4, 16, 32, 300);
  std::vector<LabeledSample> relabeled;
  for (const auto& s : data) relabeled.push_back({s.image, model.recognize(s.image).text});
  EXPECT_EQ(evaluate(model, relabeled), 1.0);

  std::vector<LabeledSample> wrong;
  for (const auto& s : relabeled) wrong.push_back({s.image, s.label + "Z"});
  EXPECT_EQ(evaluate(model, wrong), 0.0);

  std::vector<LabeledSample> mixed{relabeled[0], wrong[1], relabeled[2], wrong[3]};
  const double acc = evaluate(model, mixed);
  EXPECT_EQ(acc, 0.5);
  std::reverse(mixed.begin(), mixed.end());
  EXPECT_EQ(evaluate(model, mixed), acc);
  EXPECT_THROW(evaluate(model, std::vector<LabeledSample>{}), InputError);
}

TEST(Evaluate, EmptyPredictionsScoreZero) {
  Model<float> model(ModelConfig::micro(), 7);
  auto& out = model.decoder().output;
  std::fill(out.weight.data().begin(), out.weight.data().end(), 0.0f);
  std::fill(out.bias.data().begin(), out.bias.data().end(), 0.0f);
  out.bias[CharSet::kEos] = 5.0f;
  EXPECT_EQ(evaluate(model, tiny_dataset(5, 16, 32, 400)), 0.0);
}

}  // namespace
}  // namespace rceed
