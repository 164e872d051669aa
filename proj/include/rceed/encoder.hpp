#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "rceed/ld_lstm.hpp"
#include "rceed/nn.hpp"

namespace rceed {

// One row of the backbone table.
struct BackboneLayer {
  enum class Kind { kConv, kPool, kResidual };
  Kind kind = Kind::kConv;
  std::size_t channels = 0;  // conv / residual output width
  std::size_t repeat = 1;    // residual blocks in the stage
  ops::PoolGeometry pool{};

  static BackboneLayer conv(std::size_t channels) { return {Kind::kConv, channels, 1, {}}; }
  static BackboneLayer residual(std::size_t channels, std::size_t repeat) {
    return {Kind::kResidual, channels, repeat, {}};
  }
  static BackboneLayer max_pool(std::size_t stride_h, std::size_t stride_w) {
    return {Kind::kPool, 0, 1, ops::PoolGeometry{2, 2, stride_h, stride_w, true}};
  }
};

struct BackboneConfig {
  std::vector<BackboneLayer> layers;

  // ResNet feature extractor for 48x160 inputs; final map 3x20x512.
  static BackboneConfig paper();
  // Same layout with every width divided by `divisor` and residual stage
  // repeats replaced by `repeats` when non-empty.
  static BackboneConfig scaled(std::size_t divisor, std::vector<std::size_t> repeats = {});
  std::size_t output_channels() const;
};

struct LayerShape {
  std::string label;
  Shape shape;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParameterStore<T>& store, const std::string& name, const BackboneConfig& config,
           Rng& init_rng);

  // image[H x W x 1] -> [H' x W' x C]; every conv is followed by ReLU.
  // When `trace` is given, the output shape of each table row is appended.
  Tensor<T> operator()(const Tensor<T>& image, std::vector<LayerShape>* trace = nullptr) const;

  const BackboneConfig& config() const { return config_; }

 private:
  using Stage = std::variant<Conv2d<T>, ops::PoolGeometry, std::vector<ResidualBlock<T>>>;
  BackboneConfig config_;
  std::vector<Stage> stages_;
};

// Mean over the rows of each column: visual[R x C x D] -> [C x D].
template <typename T>
Tensor<T> column_pool(const Tensor<T>& visual);

// out[r][j] = visual[r][j] + context[j] for every row r.
template <typename T>
Tensor<T> fuse(const Tensor<T>& visual, const Tensor<T>& context);

template <typename T>
struct FeatureMap {
  Tensor<T> v;         // [N x d_v], row-major over (row, column) of the final map
  Tensor<T> holistic;  // [1 x d_v]
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct EncoderConfig {
  BackboneConfig backbone = BackboneConfig::paper();
  std::size_t hidden = 256;  // per direction; context width is 2 * hidden
  bool layernorm_dropout = true;
  double dropout = 0.1;
  bool visual_feature = true;
  bool context_feature = true;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterStore<T>& store, const std::string& name, const EncoderConfig& config,
          Rng& init_rng);

  // v = flatten(fuse(visual, context) + PE); components switched off by the
  // configuration contribute zeros. The holistic feature comes from the
  // bidirectional LSTM run over the pooled columns.
  FeatureMap<T> operator()(const Tensor<T>& image, Mode mode, Rng& rng) const;

  const Backbone<T>& backbone() const { return backbone_; }
  const BiLstm<T>& bilstm() const { return bilstm_; }
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  Backbone<T> backbone_;
  BiLstm<T> bilstm_;
};

}  // namespace rceed
