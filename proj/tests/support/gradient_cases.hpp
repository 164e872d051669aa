#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace rceed::testing {

struct GradientCase {
  std::string name;
  double tolerance;
  std::function<GradCheckReport()> run;
};

// Finite-difference checks of every differentiable building block of the
// recognizer plus the full teacher-forced loss of the micro model.
const std::vector<GradientCase>& gradient_suite();

}  // namespace rceed::testing
