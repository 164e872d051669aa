#include "rceed/training.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <numeric>
#include <thread>

#include "rceed/errors.hpp"

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace rceed {

#if defined(__SSE__)
// FTZ is bit 15 and DAZ bit 6 of MXCSR.
DenormalsAreZero::DenormalsAreZero() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
DenormalsAreZero::~DenormalsAreZero() { _mm_setcsr(saved_); }
#else
DenormalsAreZero::DenormalsAreZero() = default;
DenormalsAreZero::~DenormalsAreZero() = default;
#endif

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects logits [L x C]");
  if (logits.dim(0) != targets.size())
    throw InputError("cross_entropy: " + std::to_string(logits.dim(0)) + " logit rows but " +
                     std::to_string(targets.size()) + " targets");
  for (std::size_t t : targets)
    if (t >= logits.dim(1)) throw InputError("target class " + std::to_string(t) + " out of range");
  return ops::scale(ops::mean_all(ops::pick(ops::log_softmax(logits), targets)), T(-1));
}

template <typename T>
Tensor<T> l2_penalty(const ParameterStore<T>& params) {
  std::vector<Tensor<T>> terms;
  for (const auto& p : params.all())
    if (p.role == ParamRole::kWeight) terms.push_back(ops::sum_squares(p.value));
  if (terms.empty()) return Tensor<T>::scalar(T(0));
  Tensor<T> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return total;
}

template <typename T>
void Adam<T>::step(ParameterStore<T>& params, double learning_rate) {
  auto& all = params.all();
  for (const auto& p : all) {
    if (!p.value.has_grad()) continue;
    for (T g : p.value.grad())
      if (!std::isfinite(static_cast<double>(g)))
        throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
  }
  if (m_.empty()) {
    for (const auto& p : all) {
      m_.emplace_back(p.value.size(), T(0));
      v_.emplace_back(p.value.size(), T(0));
    }
  }
  if (m_.size() != all.size()) throw TrainingError("parameter set changed between Adam steps");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < all.size(); ++k) {
    Tensor<T>& value = all[k].value;
    auto data = value.data();
    const bool has = value.has_grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has ? static_cast<double>(value.grad()[i]) : 0.0;
      const double m = b1 * m_[k][i] + (1 - b1) * g;
      const double v = b2 * v_[k][i] + (1 - b2) * g * g;
      m_[k][i] = static_cast<T>(m);
      v_[k][i] = static_cast<T>(v);
      data[i] -= static_cast<T>(learning_rate * (m / c1) / (std::sqrt(v / c2) + config_.epsilon));
    }
  }
}

double Schedule::rate(std::size_t step, std::size_t total_steps) const {
  if (total_steps == 0) return base;
  return static_cast<double>(step) < switch_fraction * static_cast<double>(total_steps) ? base
                                                                                         : final;
}

template <typename T>
double clip_gradients(ParameterStore<T>& params, double max_norm) {
  double sq = 0;
  for (auto& p : params.all())
    if (p.value.has_grad())
      for (T g : p.value.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params.all())
      if (p.value.has_grad())
        for (T& g : p.value.mutable_grad()) g *= factor;
  }
  return norm;
}

template <typename T>
BatchLoss<T> batch_loss(const Model<T>& model, const std::vector<const LabeledSample*>& batch,
                        double l2_coefficient, Mode mode, Rng& rng) {
  if (batch.empty()) throw InputError("empty batch");
  Tensor<T> ce;
  for (const LabeledSample* sample : batch) {
    const auto target = CharSet::encode(sample->label);
    Tensor<T> image;
    if constexpr (std::is_same_v<T, float>)
      image = sample->image;
    else
      image = sample->image.template cast<T>();
    Tensor<T> term = cross_entropy(model.logits(image, target, mode, rng), target);
    ce = ce.defined() ? ops::add(ce, term) : term;
  }
  ce = ops::scale(ce, T(1) / static_cast<T>(batch.size()));
  Tensor<T> l2 = l2_penalty(model.parameters());
  BatchLoss<T> out;
  out.total = ops::add(ce, ops::scale(l2, static_cast<T>(l2_coefficient)));
  out.values = {static_cast<double>(ce.item()), static_cast<double>(l2.item()),
                static_cast<double>(out.total.item())};
  return out;
}

Schedule TrainConfig::schedule() const {
  return Schedule{learning_rate, learning_rate * final_rate_ratio, switch_fraction};
}

void write_log_header(std::ostream& out) { out << "step\tlr\tce\tl2\ttotal\telapsed\n"; }

void write_log_line(std::ostream& out, const StepReport& r) {
  char line[160];
  std::snprintf(line, sizeof(line), "%zu\t%.3g\t%.6f\t%.4f\t%.6f\t%.2f\n", r.step,
                r.learning_rate, r.loss.cross_entropy, r.loss.l2, r.loss.total,
                r.elapsed_seconds);
  out << line;
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model, TrainConfig config)
    : model_(model),
      config_(config),
      dropout_rng_(Rng::derive(config.seed, 1)),
      start_(std::chrono::steady_clock::now()) {
  if (config.steps == 0) throw ConfigError("training needs at least one step");
  if (config.batch == 0) throw ConfigError("batch size must be positive");
  if (!(config.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (!(config.clip_norm > 0)) throw ConfigError("clip norm must be positive");
}

template <typename T>
StepReport Trainer<T>::step(const std::vector<const LabeledSample*>& batch) {
  DenormalsAreZero flush;
  auto& params = model_.parameters();
  params.zero_grad();
  Tape<T> tape;
  BatchLoss<T> loss;
  {
    TapeScope<T> scope(tape);
    loss = batch_loss(model_, batch, config_.l2, Mode::kTrain, dropout_rng_);
  }
  if (!std::isfinite(loss.values.total))
    throw TrainingError("non-finite loss at step " + std::to_string(adam_.steps() + 1));
  tape.backward(loss.total);
  if (config_.clip) clip_gradients(params, config_.clip_norm);
  StepReport report;
  report.step = adam_.steps() + 1;
  report.learning_rate = config_.schedule().rate(adam_.steps(), config_.steps);
  adam_.step(params, report.learning_rate);
  params.zero_grad();
  report.loss = loss.values;
  report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return report;
}

std::vector<std::vector<std::size_t>> batch_plan(std::size_t dataset_size, std::size_t batch,
                                                 std::size_t steps, std::uint64_t seed) {
  if (dataset_size == 0) throw InputError("cannot train on an empty dataset");
  Rng rng = Rng::derive(seed, 0);
  std::vector<std::size_t> order;
  std::vector<std::vector<std::size_t>> plan;
  std::size_t cursor = 0;
  const std::size_t width = std::min(batch, dataset_size);
  while (plan.size() < steps) {
    std::vector<std::size_t> b;
    while (b.size() < width) {
      if (cursor == order.size()) {
        order.resize(dataset_size);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = dataset_size; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      b.push_back(order[cursor++]);
    }
    plan.push_back(std::move(b));
  }
  return plan;
}

namespace {

// Bounded single-producer queue of assembled batches.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(std::vector<const LabeledSample*> batch) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(batch));
    not_empty_.notify_one();
  }
  bool pop(std::vector<const LabeledSample*>& out) {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return false;
    out = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return true;
  }
  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::condition_variable not_full_, not_empty_;
  std::deque<std::vector<const LabeledSample*>> items_;
  bool closed_ = false;
};

}  // namespace

template <typename T>
void Trainer<T>::run(const std::vector<LabeledSample>& data,
                     const std::function<void(const StepReport&)>& on_step) {
  const auto plan = batch_plan(data.size(), config_.batch, config_.steps, config_.seed);
  const auto assemble = [&](const std::vector<std::size_t>& indices) {
    std::vector<const LabeledSample*> batch;
    for (std::size_t i : indices) batch.push_back(&data[i]);
    return batch;
  };
  start_ = std::chrono::steady_clock::now();
  if (!config_.prefetch) {
    for (const auto& indices : plan) {
      StepReport r = step(assemble(indices));
      if (on_step) on_step(r);
    }
    return;
  }
  BatchQueue queue(4);
  std::thread producer([&] {
    for (const auto& indices : plan) queue.push(assemble(indices));
    queue.close();
  });
  try {
    std::vector<const LabeledSample*> batch;
    while (queue.pop(batch)) {
      StepReport r = step(batch);
      if (on_step) on_step(r);
    }
  } catch (...) {
    queue.close();
    producer.join();
    throw;
  }
  producer.join();
}

template <typename T>
double evaluate(const Model<T>& model, const std::vector<LabeledSample>& data) {
  if (data.empty()) throw InputError("cannot evaluate on an empty dataset");
  DenormalsAreZero flush;
  std::size_t correct = 0;
  for (const auto& sample : data) {
    Tensor<T> image;
    if constexpr (std::is_same_v<T, float>)
      image = sample.image;
    else
      image = sample.image.template cast<T>();
    if (model.recognize(image).text == sample.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

#define RCEED_INSTANTIATE_TRAINING(T)                                                       \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);     \
  template Tensor<T> l2_penalty(const ParameterStore<T>&);                                 \
  template class Adam<T>;                                                                   \
  template double clip_gradients(ParameterStore<T>&, double);                               \
  template BatchLoss<T> batch_loss(const Model<T>&, const std::vector<const LabeledSample*>&, \
                                   double, Mode, Rng&);                                     \
  template class Trainer<T>;                                                                \
  template double evaluate(const Model<T>&, const std::vector<LabeledSample>&);

RCEED_INSTANTIATE_TRAINING(float)
RCEED_INSTANTIATE_TRAINING(double)

}  // namespace rceed
