#include "rceed/ld_lstm.hpp"

namespace rceed {

template <typename T>
LstmCell<T>::LstmCell(ParameterStore<T>& store, const std::string& name,
                      const LstmCellConfig& config, Rng& init_rng)
    : config_(config) {
  if (config.input == 0 || config.hidden == 0)
    throw ConfigError("LSTM cell '" + name + "' needs positive input and hidden widths");
  DropoutSpec(config.dropout, Mode::kTrain);  // validates p
  const std::size_t gates = 4 * config.hidden;
  w_x = store.create(name + ".w_x", Shape{gates, config.input}, ParamRole::kWeight);
  init_xavier(w_x, config.input, gates, init_rng);
  w_h = store.create(name + ".w_h", Shape{gates, config.hidden}, ParamRole::kWeight);
  init_xavier(w_h, config.hidden, gates, init_rng);
  if (config.embedding) {
    w_e = store.create(name + ".w_e", Shape{gates, config.embedding}, ParamRole::kWeight);
    init_xavier(w_e, config.embedding, gates, init_rng);
  }
  if (config.layernorm_dropout) {
    gain_x = LayerNormParams<T>::create(store, name + ".gain_x", gates);
    gain_h = LayerNormParams<T>::create(store, name + ".gain_h", gates);
    if (config.embedding) gain_e = LayerNormParams<T>::create(store, name + ".gain_e", gates);
  } else {
    bias = store.create(name + ".bias", Shape{gates}, ParamRole::kBias);
  }
}

template <typename T>
Tensor<T> LstmCell<T>::input_term(const Tensor<T>& x) const {
  Tensor<T> proj = ops::matmul(x, w_x, /*transpose_b=*/true);
  return config_.layernorm_dropout ? layernorm(proj, *gain_x) : proj;
}

template <typename T>
LstmState<T> LstmCell<T>::step(const Tensor<T>& x, const LstmState<T>& prev, Mode mode,
                               Rng& rng, const Tensor<T>* embedding) const {
  return step_from_term(input_term(x), prev, mode, rng, embedding);
}

template <typename T>
LstmState<T> LstmCell<T>::step_from_term(const Tensor<T>& x_term, const LstmState<T>& prev,
                                         Mode mode, Rng& rng, const Tensor<T>* embedding) const {
  if ((embedding != nullptr) != (config_.embedding != 0))
    throw ConfigError(config_.embedding ? "LSTM cell requires a token embedding input"
                                        : "LSTM cell has no embedding term");
  const bool ld = config_.layernorm_dropout;
  Tensor<T> h_proj = ops::matmul(prev.h, w_h, true);
  Tensor<T> gates = ops::add(x_term, ld ? layernorm(h_proj, *gain_h) : h_proj);
  if (embedding) {
    Tensor<T> e_proj = ops::matmul(*embedding, w_e, true);
    gates = ops::add(gates, ld ? layernorm(e_proj, *gain_e) : e_proj);
  }
  if (!ld) gates = ops::add(gates, bias);

  auto parts = ops::split(gates, 4, 1);
  Tensor<T> f = ops::sigmoid(parts[0]);
  Tensor<T> i = ops::sigmoid(parts[1]);
  Tensor<T> o = ops::sigmoid(parts[2]);
  Tensor<T> candidate = ops::tanh(parts[3]);

  Tensor<T> c = ops::add(ops::mul(f, prev.c), ops::mul(i, candidate));
  Tensor<T> h;
  if (ld) {
    const DropoutSpec spec(config_.dropout, mode);
    c = dropout(c, spec, rng);
    h = dropout(ops::mul(o, ops::tanh(c)), spec, rng);
  } else {
    h = ops::mul(o, ops::tanh(c));
  }
  return {h, c};
}

template <typename T>
BiLstm<T>::BiLstm(ParameterStore<T>& store, const std::string& name, const LstmCellConfig& config,
                  Rng& init_rng)
    : forward_cell(store, name + ".fwd", config, init_rng),
      backward_cell(store, name + ".bwd", config, init_rng) {}

template <typename T>
BiLstmOutput<T> BiLstm<T>::operator()(const Tensor<T>& seq, Mode mode, Rng& rng) const {
  if (seq.rank() != 2 || seq.dim(0) == 0)
    throw InputError("bidirectional LSTM needs a non-empty [n x D] sequence");
  const std::size_t n = seq.dim(0);
  const std::size_t hidden = forward_cell.config().hidden;

  auto fwd_terms = ops::split(forward_cell.input_term(seq), n, 0);
  auto bwd_terms = ops::split(backward_cell.input_term(seq), n, 0);

  std::vector<Tensor<T>> fwd_h(n), bwd_h(n);
  auto state = LstmState<T>::zeros(hidden);
  for (std::size_t t = 0; t < n; ++t) {
    state = forward_cell.step_from_term(fwd_terms[t], state, mode, rng);
    fwd_h[t] = state.h;
  }
  Tensor<T> fwd_final = state.h;
  state = LstmState<T>::zeros(hidden);
  for (std::size_t t = n; t-- > 0;) {
    state = backward_cell.step_from_term(bwd_terms[t], state, mode, rng);
    bwd_h[t] = state.h;
  }
  Tensor<T> bwd_final = state.h;

  Tensor<T> context = ops::concat({ops::concat(fwd_h, 0), ops::concat(bwd_h, 0)}, 1);
  return {context, ops::concat({fwd_final, bwd_final}, 1)};
}

template class LstmCell<float>;
template class LstmCell<double>;
template class BiLstm<float>;
template class BiLstm<double>;

}  // namespace rceed
