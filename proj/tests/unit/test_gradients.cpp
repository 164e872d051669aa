#include <gtest/gtest.h>

#include <cstdio>

#include "gradient_cases.hpp"

namespace rceed::testing {
namespace {

class GradientSuite : public ::testing::TestWithParam<GradientCase> {};

TEST_P(GradientSuite, MatchesCentralDifferences) {
  const GradientCase& c = GetParam();
  const GradCheckReport r = c.run();
  std::printf("%s: %zu entries, max rel err %.3g\n", c.name.c_str(), r.checked, r.max_rel_error);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, c.tolerance) << "worst entry: " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(All, GradientSuite, ::testing::ValuesIn(gradient_suite()),
                         [](const auto& info) { return info.param.name; });

}  // namespace
}  // namespace rceed::testing
