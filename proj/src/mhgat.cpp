#include "rceed/mhgat.hpp"

#include <cmath>

namespace rceed {

double AttentionConfig::scale() const {
  return std::pow(static_cast<double>(head_width()), scale_exponent);
}

void AttentionConfig::validate() const {
  if (heads == 0 || value == 0 || query == 0) throw ConfigError("attention widths must be positive");
  if (value % heads != 0)
    throw ConfigError("feature width " + std::to_string(value) + " is not divisible by " +
                      std::to_string(heads) + " heads");
}

template <typename T>
HeadOutput<T> general_attention(const Tensor<T>& query, const Tensor<T>& v,
                                const Tensor<T>& values, const Tensor<T>& w_key, T scale) {
  if (v.rank() != 2 || values.rank() != 2 || v.dim(0) != values.dim(0))
    throw DimensionError("attention feature map " + shape_str(v.shape()) + " and values " +
                         shape_str(values.shape()) + " disagree");
  Tensor<T> keys = ops::matmul(v, w_key);
  Tensor<T> scores = ops::scale(ops::matmul(query, keys, true), T(1) / scale);
  Tensor<T> weights = ops::softmax(scores);
  return {ops::matmul(weights, values), weights};
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterStore<T>& store, const std::string& name,
                                          const AttentionConfig& config, Rng& init_rng)
    : config_(config) {
  config.validate();
  const std::size_t hw = config.head_width();
  for (std::size_t j = 0; j < config.heads; ++j) {
    const std::string head = name + ".head" + std::to_string(j);
    w_query.push_back(store.create(head + ".w_query", Shape{config.query, hw}, ParamRole::kWeight));
    init_xavier(w_query.back(), config.query, hw, init_rng);
    w_key.push_back(store.create(head + ".w_key", Shape{config.value, hw}, ParamRole::kWeight));
    init_xavier(w_key.back(), config.value, hw, init_rng);
  }
}

template <typename T>
AttentionMemory<T> MultiHeadAttention<T>::prepare(const Tensor<T>& v) const {
  if (v.rank() != 2 || v.dim(1) != config_.value)
    throw DimensionError("attention expects [N x " + std::to_string(config_.value) +
                         "] features, got " + shape_str(v.shape()));
  AttentionMemory<T> memory;
  memory.positions = v.dim(0);
  memory.values = ops::split(v, config_.heads, 1);
  for (const auto& w : w_key) memory.keys.push_back(ops::matmul(v, w));
  return memory;
}

template <typename T>
AttentionOutput<T> MultiHeadAttention<T>::attend(const Tensor<T>& query,
                                                 const AttentionMemory<T>& memory) const {
  if (query.rank() != 2 || query.dim(1) != config_.query)
    throw DimensionError("attention query " + shape_str(query.shape()) + " should be [1 x " +
                         std::to_string(config_.query) + "]");
  const T inv_scale = static_cast<T>(1.0 / config_.scale());
  AttentionOutput<T> out;
  std::vector<Tensor<T>> heads;
  for (std::size_t j = 0; j < config_.heads; ++j) {
    Tensor<T> q = ops::matmul(query, w_query[j]);
    Tensor<T> scores = ops::scale(ops::matmul(q, memory.keys[j], true), inv_scale);
    Tensor<T> weights = ops::softmax(scores);
    heads.push_back(ops::matmul(weights, memory.values[j]));
    out.weights.push_back(weights);
  }
  out.glimpse = heads.size() == 1 ? heads.front() : ops::concat(heads, 1);
  return out;
}

template HeadOutput<float> general_attention(const Tensor<float>&, const Tensor<float>&,
                                             const Tensor<float>&, const Tensor<float>&, float);
template HeadOutput<double> general_attention(const Tensor<double>&, const Tensor<double>&,
                                              const Tensor<double>&, const Tensor<double>&,
                                              double);
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;

}  // namespace rceed
