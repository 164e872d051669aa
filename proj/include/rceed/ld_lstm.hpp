#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rceed/nn.hpp"

namespace rceed {

struct LstmCellConfig {
  std::size_t input = 0;
  std::size_t hidden = 0;
  // Width of the token embedding added as a third input term; 0 disables it.
  std::size_t embedding = 0;
  // false -> a plain LSTM cell (affine gates with bias, no layernorm, no dropout).
  bool layernorm_dropout = true;
  double dropout = 0.0;
};

template <typename T>
struct LstmState {
  Tensor<T> h;  // [1 x H]
  Tensor<T> c;  // [1 x H]

  static LstmState zeros(std::size_t hidden) {
    return {Tensor<T>::zeros(Shape{1, hidden}), Tensor<T>::zeros(Shape{1, hidden})};
  }
};

// Layernorm-Dropout LSTM cell.
//
//   [f; i; o; c~] = LN(W_x x; a1) + LN(W_h h_prev; a2) [+ LN(W_e e; a3)]
//   c = Dropout(sig(f) * c_prev + sig(i) * tanh(c~), p)
//   h = Dropout(sig(o) * tanh(c), p)
//
// The gate rows of every weight matrix are laid out in blocks of H in the
// order f, i, o, c~. Fresh, independent masks are drawn for c and h at
// every step.
template <typename T>
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParameterStore<T>& store, const std::string& name, const LstmCellConfig& config,
           Rng& init_rng);

  const LstmCellConfig& config() const { return config_; }

  // Input term for one or many rows: x[n x D_in] -> [n x 4H].
  Tensor<T> input_term(const Tensor<T>& x) const;

  LstmState<T> step(const Tensor<T>& x, const LstmState<T>& prev, Mode mode, Rng& rng,
                    const Tensor<T>* embedding = nullptr) const;
  // Same as step() with input_term(x) already computed.
  LstmState<T> step_from_term(const Tensor<T>& x_term, const LstmState<T>& prev, Mode mode,
                              Rng& rng, const Tensor<T>* embedding = nullptr) const;

  Tensor<T> w_x, w_h, w_e;
  std::optional<LayerNormParams<T>> gain_x, gain_h, gain_e;
  Tensor<T> bias;  // plain-LSTM mode only

 private:
  LstmCellConfig config_;
};

template <typename T>
struct BiLstmOutput {
  Tensor<T> context;   // [n x 2H], row t = [fwd h_t ; bwd h_t]
  Tensor<T> holistic;  // [1 x 2H] = [final fwd h ; final bwd h]
};

// Single-layer bidirectional LSTM over the rows of seq[n x D].
template <typename T>
class BiLstm {
 public:
  BiLstm() = default;
  BiLstm(ParameterStore<T>& store, const std::string& name, const LstmCellConfig& config,
         Rng& init_rng);

  BiLstmOutput<T> operator()(const Tensor<T>& seq, Mode mode, Rng& rng) const;

  LstmCell<T> forward_cell, backward_cell;
};

}  // namespace rceed
