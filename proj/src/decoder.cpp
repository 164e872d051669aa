#include "rceed/decoder.hpp"

namespace rceed {

template <typename T>
Decoder<T>::Decoder(ParameterStore<T>& store, const std::string& name, const DecoderConfig& config,
                    Rng& init_rng)
    : config_(config) {
  if (config.max_steps == 0) throw ConfigError("decoder needs at least one step");
  cell = LstmCell<T>(store, name + ".cell",
                     LstmCellConfig{config.value, config.hidden, config.embedding,
                                    config.layernorm_dropout, config.dropout},
                     init_rng);
  attention = MultiHeadAttention<T>(
      store, name + ".attention",
      AttentionConfig{config.hidden, config.value, config.heads, config.scale_exponent}, init_rng);
  output = Linear<T>::create(store, name + ".output", config.hidden + config.value,
                             CharSet::kClasses, init_rng);
  embedding = Embedding<T>::create(store, name + ".embedding", CharSet::kVocabulary,
                                   config.embedding, init_rng);
}

template <typename T>
DecodeStep<T> Decoder<T>::finish_step(LstmState<T> state, const AttentionMemory<T>& memory) const {
  AttentionOutput<T> att = attention.attend(state.h, memory);
  Tensor<T> slot = config_.glimpse_predict ? att.glimpse : Tensor<T>::zeros(att.glimpse.shape());
  DecodeStep<T> step;
  step.logits = output(ops::concat({state.h, slot}, 1));
  step.token = ops::argmax_rows(step.logits).front();
  step.state = std::move(state);
  step.glimpse = att.glimpse;
  step.weights = std::move(att.weights);
  return step;
}

template <typename T>
DecodeStart<T> Decoder<T>::init_decode(const AttentionMemory<T>& memory, const Tensor<T>& holistic,
                                       Mode mode, Rng& rng) const {
  if (holistic.shape() != Shape{1, config_.hidden})
    throw DimensionError("holistic feature " + shape_str(holistic.shape()) +
                         " does not match decoder hidden width " + std::to_string(config_.hidden));
  DecodeStart<T> start;
  LstmState<T> prev;
  if (config_.guided_init) {
    start.global_glimpse = attention.attend(holistic, memory).glimpse;
    prev = {holistic, Tensor<T>::zeros(Shape{1, config_.hidden})};
  } else {
    start.global_glimpse = Tensor<T>::zeros(Shape{1, config_.value});
    prev = LstmState<T>::zeros(config_.hidden);
  }
  const Tensor<T> sos = embedding(CharSet::kSos);
  start.first = finish_step(cell.step(start.global_glimpse, prev, mode, rng, &sos), memory);
  return start;
}

template <typename T>
DecodeStep<T> Decoder<T>::decode_step(const LstmState<T>& state, const Tensor<T>& glimpse_prev,
                                      std::size_t token_prev, const AttentionMemory<T>& memory,
                                      Mode mode, Rng& rng) const {
  const Tensor<T> emb = embedding(token_prev);
  return finish_step(cell.step(glimpse_prev, state, mode, rng, &emb), memory);
}

namespace {

template <typename T>
std::vector<float> to_floats(const Tensor<T>& t) {
  return std::vector<float>(t.data().begin(), t.data().end());
}

template <typename T>
TraceStep trace_of(const DecodeStep<T>& step) {
  TraceStep s;
  s.hidden = to_floats(step.state.h);
  s.glimpse = to_floats(step.glimpse);
  s.logits = to_floats(step.logits);
  s.token = step.token;
  for (const auto& w : step.weights) s.weights.push_back(to_floats(w));
  return s;
}

}  // namespace

template <typename T>
DecodeResult Decoder<T>::greedy_decode(const FeatureMap<T>& features) const {
  NoGradScope<T> no_grad;
  Rng unused(0);
  const AttentionMemory<T> memory = attention.prepare(features.v);
  DecodeResult result;
  result.trace.rows = features.rows;
  result.trace.cols = features.cols;
  DecodeStep<T> step = init_decode(memory, features.holistic, Mode::kEval, unused).first;
  std::vector<std::size_t> tokens;
  for (std::size_t t = 0;; ++t) {
    result.trace.steps.push_back(trace_of(step));
    tokens.push_back(step.token);
    if (step.token == CharSet::kEos || t + 1 == config_.max_steps) break;
    step = decode_step(step.state, step.glimpse, step.token, memory, Mode::kEval, unused);
  }
  // The last of the max_steps slots is reserved for EOS, so an unterminated
  // decode keeps at most max_steps - 1 characters.
  if (tokens.back() != CharSet::kEos) tokens.pop_back();
  result.text = CharSet::decode(tokens);
  return result;
}

template <typename T>
Tensor<T> Decoder<T>::teacher_forced_logits(const FeatureMap<T>& features,
                                            const std::vector<std::size_t>& target, Mode mode,
                                            Rng& rng) const {
  if (target.empty() || target.back() != CharSet::kEos)
    throw InputError("teacher-forcing target must end with EOS");
  if (target.size() > config_.max_steps)
    throw InputError("target of " + std::to_string(target.size()) + " steps exceeds the " +
                     std::to_string(config_.max_steps) + "-step limit");
  const AttentionMemory<T> memory = attention.prepare(features.v);
  DecodeStep<T> step = init_decode(memory, features.holistic, mode, rng).first;
  std::vector<Tensor<T>> logits{step.logits};
  for (std::size_t t = 1; t < target.size(); ++t) {
    step = decode_step(step.state, step.glimpse, target[t - 1], memory, mode, rng);
    logits.push_back(step.logits);
  }
  return logits.size() == 1 ? logits.front() : ops::concat(logits, 0);
}

template class Decoder<float>;
template class Decoder<double>;

}  // namespace rceed
