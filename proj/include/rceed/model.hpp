#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rceed/decoder.hpp"
#include "rceed/encoder.hpp"
#include "rceed/rectifier.hpp"

namespace rceed {

// Complete architecture description. Presets:
//   paper - widths 512/512/512/256, 8 heads
//   desk  - every width divided by 4 (d_v 128, LSTM 64 per direction,
//           decoder hidden 128, embedding 64), 4 heads
//   micro - widths <= 8 on a 16x32 input; used for 64-bit gradient checks
struct ModelConfig {
  std::string preset = "paper";
  std::size_t height = 48;
  std::size_t width = 160;
  std::size_t width_divisor = 1;
  std::vector<std::size_t> residual_repeats{1, 2, 5, 3};
  std::size_t encoder_hidden = 256;
  std::size_t decoder_hidden = 512;
  std::size_t embedding = 256;
  std::size_t heads = 8;
  double scale_exponent = 2.0;
  double encoder_dropout = 0.1;
  double decoder_dropout = 0.5;
  bool ld = true;  // layernorm-dropout cells (false -> plain LSTM)
  bool vf = true;  // visual feature in the fused map
  bool cf = true;  // context feature in the fused map
  bool gi = true;  // guided decoder initialization
  bool gp = true;  // glimpse used for prediction
  bool rectifier = true;
  std::size_t control_points = 20;
  std::vector<std::size_t> localization_channels{16, 32, 64, 128};
  std::size_t localization_hidden = 128;
  std::size_t max_steps = 27;

  static ModelConfig paper();
  static ModelConfig desk();
  static ModelConfig micro();
  static ModelConfig from_preset(const std::string& name);

  std::size_t feature_width() const { return 512 / width_divisor; }
  BackboneConfig backbone() const;
  EncoderConfig encoder() const;
  DecoderConfig decoder() const;
  RectifierConfig rectifier_config() const;
  void validate() const;

  // Flat numeric view used to persist the configuration in checkpoints.
  std::map<std::string, std::vector<double>> to_fields() const;
  static ModelConfig from_fields(const std::map<std::string, std::vector<double>>& fields);
  bool operator==(const ModelConfig& other) const;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }

  Tensor<T> rectify(const Tensor<T>& image) const;
  FeatureMap<T> encode(const Tensor<T>& image, Mode mode, Rng& rng) const;
  // Teacher-forced logits [L x 63] for a class sequence ending in EOS.
  Tensor<T> logits(const Tensor<T>& image, const std::vector<std::size_t>& target, Mode mode,
                   Rng& rng) const;
  DecodeResult recognize(const Tensor<T>& image) const;

  const std::optional<Rectifier<T>>& rectifier() const { return rectifier_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Decoder<T>& decoder() const { return decoder_; }
  Decoder<T>& decoder() { return decoder_; }

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  std::optional<Rectifier<T>> rectifier_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
};

}  // namespace rceed
