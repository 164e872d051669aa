#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "rceed/model.hpp"
#include "rceed/synth.hpp"

namespace rceed {

// Flushes denormal floats to zero on the calling thread for the guard's lifetime.
class DenormalsAreZero {
 public:
  DenormalsAreZero();
  ~DenormalsAreZero();
  DenormalsAreZero(const DenormalsAreZero&) = delete;
  DenormalsAreZero& operator=(const DenormalsAreZero&) = delete;

 private:
  unsigned saved_ = 0;
};

// Mean over positions of -log softmax(logits)[target]; logits [L x C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets);

// Sum of squares over every kWeight parameter.
template <typename T>
Tensor<T> l2_penalty(const ParameterStore<T>& params);

struct LossBreakdown {
  double cross_entropy = 0.0;
  double l2 = 0.0;
  double total = 0.0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One bias-corrected update from the gradients currently stored on the
  // parameters. Missing gradients count as zero.
  void step(ParameterStore<T>& params, double learning_rate);

  std::size_t steps() const { return steps_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// base until `switch_fraction` of the run, then final.
struct Schedule {
  double base = 1e-4;
  double final = 1e-5;
  double switch_fraction = 0.9;

  double rate(std::size_t step, std::size_t total_steps) const;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_gradients(ParameterStore<T>& params, double max_norm);

// Teacher-forced loss of one batch; records on the active tape if any.
template <typename T>
struct BatchLoss {
  Tensor<T> total;
  LossBreakdown values;
};

template <typename T>
BatchLoss<T> batch_loss(const Model<T>& model, const std::vector<const LabeledSample*>& batch,
                        double l2_coefficient, Mode mode, Rng& rng);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  double learning_rate = 1e-4;
  double final_rate_ratio = 0.1;
  double switch_fraction = 0.9;
  double l2 = 1e-4;
  bool clip = true;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  bool prefetch = false;  // assemble batches on a worker thread

  Schedule schedule() const;
};

struct StepReport {
  std::size_t step = 0;  // 1-based
  double learning_rate = 0.0;
  LossBreakdown loss;
  double elapsed_seconds = 0.0;
};

// Writes one tab-separated line: step, lr, CE, L2, total, elapsed.
void write_log_header(std::ostream& out);
void write_log_line(std::ostream& out, const StepReport& report);

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig config);

  // One optimization step on `batch`; dropout draws from the trainer's stream.
  StepReport step(const std::vector<const LabeledSample*>& batch);
  // Runs config.steps steps over epoch-shuffled batches of `data`.
  void run(const std::vector<LabeledSample>& data,
           const std::function<void(const StepReport&)>& on_step = {});

  std::size_t steps_taken() const { return adam_.steps(); }
  const Adam<T>& optimizer() const { return adam_; }

 private:
  Model<T>& model_;
  TrainConfig config_;
  Adam<T> adam_;
  Rng dropout_rng_;
  std::chrono::steady_clock::time_point start_;
};

// Shuffled epoch order of batch index lists, deterministic in `seed`.
std::vector<std::vector<std::size_t>> batch_plan(std::size_t dataset_size, std::size_t batch,
                                                 std::size_t steps, std::uint64_t seed);

// Fraction of samples whose greedy decode equals the label exactly.
template <typename T>
double evaluate(const Model<T>& model, const std::vector<LabeledSample>& data);

}  // namespace rceed
