#include "rceed/encoder.hpp"

namespace rceed {

BackboneConfig BackboneConfig::paper() { return scaled(1); }

BackboneConfig BackboneConfig::scaled(std::size_t divisor, std::vector<std::size_t> repeats) {
  if (divisor == 0) throw ConfigError("backbone width divisor must be positive");
  if (repeats.empty()) repeats = {1, 2, 5, 3};
  if (repeats.size() != 4) throw ConfigError("backbone has four residual stages");
  const auto w = [divisor](std::size_t c) {
    if (c % divisor) throw ConfigError("backbone width divisor must divide every width");
    return c / divisor;
  };
  using L = BackboneLayer;
  return BackboneConfig{{
      L::conv(w(64)),
      L::conv(w(128)),
      L::max_pool(2, 2),
      L::residual(w(256), repeats[0]),
      L::conv(w(256)),
      L::max_pool(2, 2),
      L::residual(w(256), repeats[1]),
      L::conv(w(256)),
      L::max_pool(2, 2),
      L::residual(w(512), repeats[2]),
      L::conv(w(512)),
      L::max_pool(2, 1),
      L::residual(w(512), repeats[3]),
      L::conv(w(512)),
  }};
}

std::size_t BackboneConfig::output_channels() const {
  std::size_t c = 1;
  for (const auto& l : layers)
    if (l.kind != BackboneLayer::Kind::kPool) c = l.channels;
  return c;
}

template <typename T>
Backbone<T>::Backbone(ParameterStore<T>& store, const std::string& name,
                      const BackboneConfig& config, Rng& init_rng)
    : config_(config) {
  std::size_t in = 1;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const auto& layer = config.layers[i];
    const std::string prefix = name + ".l" + std::to_string(i);
    switch (layer.kind) {
      case BackboneLayer::Kind::kConv:
        stages_.emplace_back(Conv2d<T>::create(store, prefix, in, layer.channels, 3, init_rng));
        in = layer.channels;
        break;
      case BackboneLayer::Kind::kPool:
        stages_.emplace_back(layer.pool);
        break;
      case BackboneLayer::Kind::kResidual: {
        if (layer.repeat == 0) throw ConfigError("residual stage needs at least one block");
        std::vector<ResidualBlock<T>> blocks;
        for (std::size_t b = 0; b < layer.repeat; ++b) {
          blocks.push_back(ResidualBlock<T>::create(store, prefix + ".b" + std::to_string(b), in,
                                                    layer.channels, init_rng));
          in = layer.channels;
        }
        stages_.emplace_back(std::move(blocks));
        break;
      }
    }
  }
}

template <typename T>
Tensor<T> Backbone<T>::operator()(const Tensor<T>& image, std::vector<LayerShape>* trace) const {
  if (image.rank() != 3 || image.dim(2) != 1)
    throw DimensionError("backbone expects an H x W x 1 image, got " + shape_str(image.shape()));
  Tensor<T> x = image;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& stage = stages_[i];
    std::string label;
    if (const auto* conv = std::get_if<Conv2d<T>>(&stage)) {
      x = ops::relu((*conv)(x));
      label = "conv " + std::to_string(x.dim(2));
    } else if (const auto* pool = std::get_if<ops::PoolGeometry>(&stage)) {
      x = ops::maxpool2d(x, *pool);
      label = "maxpool s" + std::to_string(pool->stride_h) + "x" + std::to_string(pool->stride_w);
    } else {
      const auto& blocks = std::get<std::vector<ResidualBlock<T>>>(stage);
      for (const auto& block : blocks) x = block(x);
      label = "residual " + std::to_string(x.dim(2)) + " x" + std::to_string(blocks.size());
    }
    if (trace) trace->push_back({label, x.shape()});
  }
  return x;
}

template <typename T>
Tensor<T> column_pool(const Tensor<T>& visual) {
  if (visual.rank() != 3) throw DimensionError("column_pool expects [R x C x D]");
  return ops::mean(visual, 0);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& visual, const Tensor<T>& context) {
  if (visual.rank() != 3 || context.rank() != 2 || context.dim(0) != visual.dim(1) ||
      context.dim(1) != visual.dim(2))
    throw DimensionError("cannot fuse visual " + shape_str(visual.shape()) + " with context " +
                         shape_str(context.shape()));
  return ops::add(visual, context);
}

template <typename T>
Encoder<T>::Encoder(ParameterStore<T>& store, const std::string& name, const EncoderConfig& config,
                    Rng& init_rng)
    : config_(config), backbone_(store, name + ".backbone", config.backbone, init_rng) {
  const std::size_t width = config.backbone.output_channels();
  if (2 * config.hidden != width)
    throw ConfigError("bidirectional LSTM output width " + std::to_string(2 * config.hidden) +
                      " must equal the visual feature width " + std::to_string(width));
  LstmCellConfig cell{width, config.hidden, 0, config.layernorm_dropout, config.dropout};
  bilstm_ = BiLstm<T>(store, name + ".bilstm", cell, init_rng);
}

template <typename T>
FeatureMap<T> Encoder<T>::operator()(const Tensor<T>& image, Mode mode, Rng& rng) const {
  Tensor<T> visual = backbone_(image);
  const std::size_t rows = visual.dim(0), cols = visual.dim(1), width = visual.dim(2);
  BiLstmOutput<T> seq = bilstm_(column_pool(visual), mode, rng);

  Tensor<T> fused;
  if (config_.visual_feature && config_.context_feature)
    fused = fuse(visual, seq.context);
  else if (config_.visual_feature)
    fused = visual;
  else if (config_.context_feature)
    fused = fuse(Tensor<T>::zeros(visual.shape()), seq.context);
  else
    fused = Tensor<T>::zeros(visual.shape());

  Tensor<T> positional = ops::reshape(sinusoidal_pe<T>(rows * cols, width), Shape{rows, cols, width});
  Tensor<T> v = ops::reshape(ops::add(fused, positional), Shape{rows * cols, width});
  return {v, seq.holistic, rows, cols};
}

template class Backbone<float>;
template class Backbone<double>;
template class Encoder<float>;
template class Encoder<double>;
template Tensor<float> column_pool(const Tensor<float>&);
template Tensor<double> column_pool(const Tensor<double>&);
template Tensor<float> fuse(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> fuse(const Tensor<double>&, const Tensor<double>&);

}  // namespace rceed
