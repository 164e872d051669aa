#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "rceed/errors.hpp"
#include "rceed/mhgat.hpp"

namespace rceed {
namespace {

using testing::random_tensor;

TEST(GeneralAttention, SinglePositionReturnsItsValue) {
  auto v = random_tensor({1, 4}, 1);
  auto values = random_tensor({1, 2}, 2);
  auto out = general_attention(random_tensor({1, 2}, 3), v, values, random_tensor({4, 2}, 4), 4.0);
  EXPECT_EQ(out.weights[0], 1.0);
  EXPECT_NEAR(out.head[0], values[0], 1e-15);
  EXPECT_NEAR(out.head[1], values[1], 1e-15);
}

TEST(GeneralAttention, IdenticalRowsGiveUniformWeights) {
  auto v = Tensor<double>::matrix({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
  auto values = random_tensor({4, 3}, 5);
  auto out = general_attention(random_tensor({1, 2}, 6), v, values, random_tensor({3, 2}, 7), 1.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.weights[i], 0.25, 1e-15);
}

TEST(GeneralAttention, BruteForceScalarOracle) {
  // N = 3, d_v = 4, d_v' = 2, small integers.
  const double v[3][4] = {{1, 0, 2, -1}, {0, 1, 1, 1}, {-1, 2, 0, 1}};
  const double w[4][2] = {{1, 0}, {0, 1}, {1, -1}, {2, 1}};
  const double q[2] = {1, 2};
  const double vals[3][2] = {{3, 1}, {-2, 4}, {0, 5}};
  const double scale = 4.0;
  double scores[3];
  for (int i = 0; i < 3; ++i) {
    scores[i] = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 2; ++b) scores[i] += v[i][a] * w[a][b] * q[b];
    scores[i] /= scale;
  }
  const double mx = std::max({scores[0], scores[1], scores[2]});
  double z = 0, e[3];
  for (int i = 0; i < 3; ++i) z += (e[i] = std::exp(scores[i] - mx));
  double head[2] = {0, 0};
  for (int i = 0; i < 3; ++i)
    for (int b = 0; b < 2; ++b) head[b] += e[i] / z * vals[i][b];

  auto out = general_attention(
      Tensor<double>::matrix({{1, 2}}),
      Tensor<double>::matrix({{1, 0, 2, -1}, {0, 1, 1, 1}, {-1, 2, 0, 1}}),
      Tensor<double>::matrix({{3, 1}, {-2, 4}, {0, 5}}),
      Tensor<double>::matrix({{1, 0}, {0, 1}, {1, -1}, {2, 1}}), scale);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out.weights[i], e[i] / z, 1e-6);
  EXPECT_NEAR(out.head[0], head[0], 1e-6);
  EXPECT_NEAR(out.head[1], head[1], 1e-6);
  // Unscaled scores by hand: -5, 5, 7.
  EXPECT_DOUBLE_EQ(scores[0] * scale, -5.0);
  EXPECT_DOUBLE_EQ(scores[1] * scale, 5.0);
  EXPECT_DOUBLE_EQ(scores[2] * scale, 7.0);
}

TEST(GeneralAttention, RejectsMismatchedValues) {
  EXPECT_THROW(general_attention(random_tensor({1, 2}, 1), random_tensor({3, 4}, 2),
                                 random_tensor({2, 2}, 3), random_tensor({4, 2}, 4), 1.0),
               DimensionError);
}

TEST(GeneralAttention, DominantScoreSelectsItsValue) {
  // One key aligned with the query by a margin of >= 20 after scaling.
  auto v = Tensor<double>::matrix({{40, 0}, {0, 0}, {1, 0}});
  auto w = Tensor<double>::matrix({{1}, {0}});
  auto values = Tensor<double>::matrix({{7}, {-3}, {2}});
  auto out = general_attention(Tensor<double>::matrix({{1}}), v, values, w, 1.0);
  EXPECT_NEAR(out.head[0], 7.0, 1e-6);
  // Shrinking score differences toward zero approaches uniform weights.
  auto flat = general_attention(Tensor<double>::matrix({{1}}), v, values, w, 1e9);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(flat.weights[i], 1.0 / 3, 1e-6);
}

TEST(AttentionConfig, ScaleAndValidation) {
  AttentionConfig full{512, 512, 8, 2.0};
  EXPECT_EQ(full.head_width(), 64u);
  EXPECT_EQ(full.scale(), 4096.0);
  EXPECT_NO_THROW(full.validate());
  AttentionConfig bad{512, 512, 3, 2.0};
  EXPECT_THROW(bad.validate(), ConfigError);
  AttentionConfig half{8, 16, 4, 0.5};
  EXPECT_EQ(half.scale(), 2.0);
}

TEST(MultiHeadAttention, FullScaleConfigurationShapes) {
  ParameterStore<float> store;
  Rng init(1);
  MultiHeadAttention<float> mh(store, "att", {512, 512, 8, 2.0}, init);
  ASSERT_EQ(mh.w_query.size(), 8u);
  EXPECT_EQ(mh.w_query[0].shape(), (Shape{512, 64}));
  EXPECT_EQ(mh.w_key[0].shape(), (Shape{512, 64}));
  auto out = mh(random_tensor({1, 512}, 2).cast<float>(), random_tensor({60, 512}, 3).cast<float>());
  EXPECT_EQ(out.glimpse.shape(), (Shape{1, 512}));
  ASSERT_EQ(out.weights.size(), 8u);
  for (const auto& w : out.weights) {
    EXPECT_EQ(w.shape(), (Shape{1, 60}));
    double total = 0;
    for (float x : w.data()) {
      EXPECT_GE(x, 0.0f);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(MultiHeadAttention, SingleHeadMatchesGeneralAttention) {
  ParameterStore<double> store;
  Rng init(2);
  MultiHeadAttention<double> mh(store, "att", {5, 6, 1, 2.0}, init);
  auto h = random_tensor({1, 5}, 3);
  auto v = random_tensor({7, 6}, 4);
  auto out = mh(h, v);
  auto ref = general_attention(ops::matmul(h, mh.w_query[0]), v, v, mh.w_key[0], 36.0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out.glimpse[i], ref.head[i], 1e-14);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(out.weights[0][i], ref.weights[i], 1e-14);
}

TEST(MultiHeadAttention, HeadsUseTheirValueSplitsInOrder) {
  ParameterStore<double> store;
  Rng init(3);
  MultiHeadAttention<double> mh(store, "att", {4, 6, 3, 1.0}, init);
  auto h = random_tensor({1, 4}, 5);
  auto v = random_tensor({5, 6}, 6);
  auto out = mh(h, v);
  auto splits = ops::split(v, 3, 1);
  for (std::size_t j = 0; j < 3; ++j) {
    auto ref = general_attention(ops::matmul(h, mh.w_query[j]), v, splits[j], mh.w_key[j], 2.0);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(out.glimpse[2 * j + k], ref.head[k], 1e-14);
  }
}

TEST(MultiHeadAttention, HeadOutputsAreConvexCombinations) {
  ParameterStore<double> store;
  Rng init(4);
  MultiHeadAttention<double> mh(store, "att", {8, 8, 2, 0.5}, init);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto v = random_tensor({6, 8}, seed + 10, -3, 3);
    auto out = mh(random_tensor({1, 8}, seed + 20, -3, 3), v);
    for (std::size_t k = 0; k < 8; ++k) {
      double lo = 1e9, hi = -1e9;
      for (std::size_t i = 0; i < 6; ++i) {
        lo = std::min(lo, v.at({i, k}));
        hi = std::max(hi, v.at({i, k}));
      }
      EXPECT_GE(out.glimpse[k], lo - 1e-12);
      EXPECT_LE(out.glimpse[k], hi + 1e-12);
    }
  }
}

TEST(MultiHeadAttention, ArgmaxInvariantToScoreShift) {
  // A constant added to every score of a head leaves its weights unchanged.
  auto scores = random_tensor({1, 9}, 30, -2, 2);
  auto a = ops::softmax(scores);
  auto b = ops::softmax(ops::add(scores, Tensor<double>::scalar(17.0)));
  EXPECT_EQ(ops::argmax_rows(a), ops::argmax_rows(b));
}

TEST(MultiHeadAttention, PreparedMemoryMatchesDirectCall) {
  ParameterStore<double> store;
  Rng init(5);
  MultiHeadAttention<double> mh(store, "att", {4, 8, 4, 2.0}, init);
  auto v = random_tensor({3, 8}, 1);
  auto memory = mh.prepare(v);
  EXPECT_EQ(memory.positions, 3u);
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto h = random_tensor({1, 4}, 40 + s);
    auto a = mh.attend(h, memory);
    auto b = mh(h, v);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(a.glimpse[k], b.glimpse[k]);
  }
}

TEST(MultiHeadAttention, DimensionChecks) {
  ParameterStore<double> store;
  Rng init(6);
  MultiHeadAttention<double> mh(store, "att", {4, 8, 2, 2.0}, init);
  EXPECT_THROW(mh(random_tensor({1, 5}, 1), random_tensor({3, 8}, 2)), DimensionError);
  EXPECT_THROW(mh(random_tensor({1, 4}, 1), random_tensor({3, 6}, 2)), DimensionError);
  ParameterStore<double> other;
  EXPECT_THROW(MultiHeadAttention<double>(other, "att", {4, 8, 3, 2.0}, init), ConfigError);
}

TEST(MultiHeadAttention, GradientMatchesFiniteDifferences) {
  ParameterStore<double> store;
  Rng init(7);
  MultiHeadAttention<double> mh(store, "att", {8, 8, 2, 1.0}, init);
  testing::NamedInputs inputs;
  for (auto& p : store.all()) inputs.emplace_back(p.name, p.value);
  auto h = random_tensor({1, 8}, 1);
  auto v = random_tensor({6, 8}, 2);
  inputs.emplace_back("h", h);
  inputs.emplace_back("v", v);
  auto r = testing::check_gradients(
      [&] {
        auto out = mh(h, v);
        return ops::add(testing::probe(out.glimpse, 1), testing::probe(out.weights[1], 2));
      },
      inputs);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

}  // namespace
}  // namespace rceed
