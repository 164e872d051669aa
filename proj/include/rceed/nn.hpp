#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rceed/ops.hpp"
#include "rceed/rng.hpp"
#include "rceed/tensor.hpp"

namespace rceed {

enum class Mode { kTrain, kEval };

// What a parameter is; L2 regularization reads only kWeight entries.
enum class ParamRole { kWeight, kGain, kBias, kEmbedding };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  ParamRole role;
};

// Ordered registry of trainable tensors. Names are unique and stable; they
// are the keys used by checkpoints.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> create(const std::string& name, Shape shape, ParamRole role);

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  const Parameter<T>* find(const std::string& name) const;
  Tensor<T> get(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter<T>> params_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
void init_xavier(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);
// Uniform in +-sqrt(6 / fan_in); used ahead of ReLU.
template <typename T>
void init_he(Tensor<T>& t, std::size_t fan_in, Rng& rng);
template <typename T>
void init_uniform(Tensor<T>& t, double lo, double hi, Rng& rng);

// ---- layer normalization ---------------------------------------------------

// Gain only; the bias is identically zero and is not a parameter.
template <typename T>
struct LayerNormParams {
  Tensor<T> gain;

  static LayerNormParams create(ParameterStore<T>& store, const std::string& name,
                                std::size_t width);
};

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const LayerNormParams<T>& params) {
  return ops::layernorm(x, params.gain);
}

// ---- dropout ---------------------------------------------------------------

struct DropoutSpec {
  double p = 0.0;
  Mode mode = Mode::kEval;

  DropoutSpec(double p, Mode mode);
};

// Inverted dropout: in train mode each element is zeroed with probability p
// and survivors are scaled by 1/(1-p). Eval mode (or p == 0) returns x.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, const DropoutSpec& spec, Rng& rng);

// ---- affine / lookup -------------------------------------------------------

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out], may be undefined

  static Linear create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  // x[n x in] -> [n x out]
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct Embedding {
  Tensor<T> table;  // [vocab x width]

  static Embedding create(ParameterStore<T>& store, const std::string& name, std::size_t vocab,
                          std::size_t width, Rng& rng);
  // -> [1 x width]
  Tensor<T> operator()(std::size_t token) const;
};

// ---- convolutional blocks (layout H x W x C) -------------------------------

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [out x k x k x in]
  Tensor<T> bias;    // [out]
  ops::ConvGeometry geometry;

  static Conv2d create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, std::size_t kernel, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const {
    return ops::conv2d(x, weight, bias, geometry);
  }
};

// out = shortcut(x) + conv_b(relu(conv_a(x))); the shortcut is the identity
// unless channel counts differ, in which case it is a 1x1 convolution.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv_a;
  Conv2d<T> conv_b;
  std::optional<Conv2d<T>> projection;

  static ResidualBlock create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                              std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
template <typename T>
Tensor<T> sinusoidal_pe(std::size_t positions, std::size_t width);

}  // namespace rceed
