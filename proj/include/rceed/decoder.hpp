#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rceed/charset.hpp"
#include "rceed/encoder.hpp"
#include "rceed/ld_lstm.hpp"
#include "rceed/mhgat.hpp"

namespace rceed {

struct DecoderConfig {
  std::size_t value = 512;      // d_v
  std::size_t hidden = 512;     // must equal the holistic feature width
  std::size_t embedding = 256;
  std::size_t heads = 8;
  double scale_exponent = 2.0;
  bool layernorm_dropout = true;
  double dropout = 0.5;
  bool guided_init = true;       // seed step 1 with (h_f, g_f) instead of zeros
  bool glimpse_predict = true;   // predict from [h; g] instead of [h; 0]
  std::size_t max_steps = 27;
};

template <typename T>
struct DecodeStep {
  LstmState<T> state;
  Tensor<T> glimpse;               // [1 x d_v]
  Tensor<T> logits;                // [1 x 63]
  std::size_t token = 0;           // argmax of logits, lowest index on ties
  std::vector<Tensor<T>> weights;  // per head [1 x N]
};

template <typename T>
struct DecodeStart {
  Tensor<T> global_glimpse;  // g_f
  DecodeStep<T> first;
};

struct TraceStep {
  std::vector<float> hidden;
  std::vector<float> glimpse;
  std::vector<std::vector<float>> weights;  // [head][position]
  std::vector<float> logits;
  std::size_t token = 0;
};

struct DecodeTrace {
  std::vector<TraceStep> steps;
  std::size_t rows = 0, cols = 0;  // attention grid of the feature map
};

struct DecodeResult {
  std::string text;
  DecodeTrace trace;
};

// Recurrent decoder. Step t: (g_{t-1}, h_{t-1}, y_{t-1}) -> LSTM -> h_t,
// g_t = attention(h_t, v), logits = W_o [h_t; g_t] + b_o. Step 1 uses
// (g_f, h_f, SOS) with g_f = attention(h_f, v) and c_0 = 0.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore<T>& store, const std::string& name, const DecoderConfig& config,
          Rng& init_rng);

  const DecoderConfig& config() const { return config_; }

  DecodeStart<T> init_decode(const AttentionMemory<T>& memory, const Tensor<T>& holistic,
                             Mode mode, Rng& rng) const;
  DecodeStep<T> decode_step(const LstmState<T>& state, const Tensor<T>& glimpse_prev,
                            std::size_t token_prev, const AttentionMemory<T>& memory, Mode mode,
                            Rng& rng) const;

  // Eval-mode greedy decoding until EOS or max_steps; text holds at most max_steps - 1 characters.
  DecodeResult greedy_decode(const FeatureMap<T>& features) const;
  // Logits [L x 63] with the ground truth fed back; target must end in EOS.
  Tensor<T> teacher_forced_logits(const FeatureMap<T>& features,
                                  const std::vector<std::size_t>& target, Mode mode,
                                  Rng& rng) const;

  LstmCell<T> cell;
  MultiHeadAttention<T> attention;
  Linear<T> output;
  Embedding<T> embedding;

 private:
  DecodeStep<T> finish_step(LstmState<T> state, const AttentionMemory<T>& memory) const;

  DecoderConfig config_;
};

}  // namespace rceed
