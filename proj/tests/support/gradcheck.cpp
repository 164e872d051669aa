#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rceed/ops.hpp"
#include "rceed/rng.hpp"

namespace rceed::testing {

GradCheckReport check_gradients(const std::function<Tensor<double>()>& loss,
                                const NamedInputs& inputs, double step, std::size_t max_entries,
                                std::uint64_t seed, double floor) {
  for (const auto& [name, t] : inputs) {
    Tensor<double> handle = t;
    handle.set_requires_grad(true);
    handle.zero_grad();
  }
  Tape<double> tape;
  Tensor<double> out;
  {
    TapeScope<double> scope(tape);
    out = loss();
  }
  tape.backward(out);

  GradCheckReport report;
  Rng rng(seed);
  NoGradScope<double> no_grad;
  for (const auto& [name, input] : inputs) {
    Tensor<double> t = input;
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> entries(t.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (max_entries > 0 && entries.size() > max_entries) {
      for (std::size_t i = 0; i < max_entries; ++i)
        std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
      entries.resize(max_entries);
    }
    for (std::size_t i : entries) {
      const double saved = t.data()[i];
      t.data()[i] = saved + step;
      const double up = loss().item();
      t.data()[i] = saved - step;
      const double down = loss().item();
      t.data()[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.checked;
      if (report.worst.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        std::ostringstream s;
        s << name << "[" << i << "] analytic=" << a << " numeric=" << numeric;
        report.worst = s.str();
      }
    }
  }
  return report;
}

Tensor<double> probe(const Tensor<double>& out, std::uint64_t seed) {
  return ops::sum_all(ops::mul(out, random_tensor(out.shape(), seed)));
}

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  Tensor<double> t(shape);
  randomize(t, seed, lo, hi);
  return t;
}

void randomize(Tensor<double>& t, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  for (double& x : t.data()) x = rng.uniform(lo, hi);
}

}  // namespace rceed::testing
