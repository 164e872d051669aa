#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rceed/nn.hpp"

namespace rceed {

struct AttentionConfig {
  std::size_t query = 0;  // width d of the query (decoder hidden state)
  std::size_t value = 0;  // width d_v of the feature map rows
  std::size_t heads = 1;
  // Scores are divided by (d_v / heads) ^ scale_exponent.
  double scale_exponent = 2.0;

  std::size_t head_width() const { return value / heads; }
  double scale() const;
  void validate() const;
};

template <typename T>
struct HeadOutput {
  Tensor<T> head;     // [1 x d_v']
  Tensor<T> weights;  // [1 x N]
};

// One general-attention head:
//   score_i = (v_i W_key . query) / scale,  weights = softmax(score),
//   head = sum_i weights_i * values_i.
// Keys project the full-width rows of v; values are the head's split of v.
template <typename T>
HeadOutput<T> general_attention(const Tensor<T>& query, const Tensor<T>& v,
                                const Tensor<T>& values, const Tensor<T>& w_key, T scale);

// Per-feature-map quantities that do not depend on the decoding step.
template <typename T>
struct AttentionMemory {
  std::vector<Tensor<T>> keys;    // per head [N x d_v']
  std::vector<Tensor<T>> values;  // per head [N x d_v']
  std::size_t positions = 0;
};

template <typename T>
struct AttentionOutput {
  Tensor<T> glimpse;               // [1 x d_v], heads concatenated in order
  std::vector<Tensor<T>> weights;  // per head [1 x N]
};

// Multi-head general attention over a flattened feature map v[N x d_v].
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& name,
                     const AttentionConfig& config, Rng& init_rng);

  const AttentionConfig& config() const { return config_; }

  AttentionMemory<T> prepare(const Tensor<T>& v) const;
  AttentionOutput<T> attend(const Tensor<T>& query, const AttentionMemory<T>& memory) const;
  AttentionOutput<T> operator()(const Tensor<T>& query, const Tensor<T>& v) const {
    return attend(query, prepare(v));
  }

  std::vector<Tensor<T>> w_query;  // per head [d x d_v']
  std::vector<Tensor<T>> w_key;    // per head [d_v x d_v']

 private:
  AttentionConfig config_;
};

}  // namespace rceed
