#include "rceed/model.hpp"

#include <cmath>

namespace rceed {

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.preset = "desk";
  c.width_divisor = 4;
  c.encoder_hidden = 64;
  c.decoder_hidden = 128;
  c.embedding = 64;
  c.heads = 4;
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.preset = "micro";
  c.height = 16;
  c.width = 32;
  c.width_divisor = 64;  // widths 1/2/4/4/8/8
  c.residual_repeats = {1, 1, 1, 1};
  c.encoder_hidden = 4;
  c.decoder_hidden = 8;
  c.embedding = 8;
  c.heads = 2;
  c.control_points = 4;
  c.localization_channels = {2, 4, 4, 8};
  c.localization_hidden = 8;
  c.max_steps = 6;
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  if (name == "micro") return micro();
  throw ConfigError("unknown preset '" + name + "' (expected paper, desk or micro)");
}

BackboneConfig ModelConfig::backbone() const {
  return BackboneConfig::scaled(width_divisor, residual_repeats);
}

EncoderConfig ModelConfig::encoder() const {
  return EncoderConfig{backbone(), encoder_hidden, ld, encoder_dropout, vf, cf};
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig d;
  d.value = feature_width();
  d.hidden = decoder_hidden;
  d.embedding = embedding;
  d.heads = heads;
  d.scale_exponent = scale_exponent;
  d.layernorm_dropout = ld;
  d.dropout = decoder_dropout;
  d.guided_init = gi;
  d.glimpse_predict = gp;
  d.max_steps = max_steps;
  return d;
}

RectifierConfig ModelConfig::rectifier_config() const {
  return RectifierConfig{height, width, control_points, 0.05, localization_channels,
                         localization_hidden};
}

void ModelConfig::validate() const {
  if (width_divisor == 0 || 64 % width_divisor != 0)
    throw ConfigError("width divisor must divide the backbone widths");
  if (feature_width() % heads != 0)
    throw ConfigError("feature width " + std::to_string(feature_width()) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  if (2 * encoder_hidden != feature_width())
    throw ConfigError("encoder LSTM must be half the feature width per direction");
  if (decoder_hidden != 2 * encoder_hidden)
    throw ConfigError("decoder hidden width must equal the holistic feature width");
  if (feature_width() % 2 != 0) throw ConfigError("feature width must be even");
  if (max_steps == 0 || max_steps > 27) throw ConfigError("max_steps must lie in [1, 27]");
  if (!(scale_exponent >= 0.0)) throw ConfigError("scale exponent must be non-negative");
  DropoutSpec(encoder_dropout, Mode::kTrain);
  DropoutSpec(decoder_dropout, Mode::kTrain);
  if (rectifier) rectifier_config().validate();
}

namespace {

std::vector<double> as_doubles(const std::vector<std::size_t>& v) {
  return std::vector<double>(v.begin(), v.end());
}

std::vector<std::size_t> as_sizes(const std::vector<double>& v) {
  std::vector<std::size_t> out;
  for (double x : v) out.push_back(static_cast<std::size_t>(std::llround(x)));
  return out;
}

}  // namespace

std::map<std::string, std::vector<double>> ModelConfig::to_fields() const {
  const auto b = [](bool x) { return std::vector<double>{x ? 1.0 : 0.0}; };
  const auto n = [](double x) { return std::vector<double>{x}; };
  double preset_code = preset == "paper" ? 0 : preset == "desk" ? 1 : preset == "micro" ? 2 : 3;
  return {
      {"preset", n(preset_code)},
      {"height", n(static_cast<double>(height))},
      {"width", n(static_cast<double>(width))},
      {"width_divisor", n(static_cast<double>(width_divisor))},
      {"residual_repeats", as_doubles(residual_repeats)},
      {"encoder_hidden", n(static_cast<double>(encoder_hidden))},
      {"decoder_hidden", n(static_cast<double>(decoder_hidden))},
      {"embedding", n(static_cast<double>(embedding))},
      {"heads", n(static_cast<double>(heads))},
      {"scale_exponent", n(scale_exponent)},
      {"encoder_dropout", n(encoder_dropout)},
      {"decoder_dropout", n(decoder_dropout)},
      {"ld", b(ld)},
      {"vf", b(vf)},
      {"cf", b(cf)},
      {"gi", b(gi)},
      {"gp", b(gp)},
      {"rectifier", b(rectifier)},
      {"control_points", n(static_cast<double>(control_points))},
      {"localization_channels", as_doubles(localization_channels)},
      {"localization_hidden", n(static_cast<double>(localization_hidden))},
      {"max_steps", n(static_cast<double>(max_steps))},
  };
}

ModelConfig ModelConfig::from_fields(const std::map<std::string, std::vector<double>>& fields) {
  const auto get = [&](const std::string& key) -> const std::vector<double>& {
    auto it = fields.find(key);
    if (it == fields.end() || it->second.empty())
      throw CheckpointError(CheckpointError::Kind::kMismatch,
                            "checkpoint configuration lacks '" + key + "'");
    return it->second;
  };
  const auto size = [&](const std::string& key) {
    return static_cast<std::size_t>(std::llround(get(key)[0]));
  };
  const auto flag = [&](const std::string& key) { return get(key)[0] != 0.0; };
  // Stored as 32-bit floats; round back to the 7 significant digits they hold.
  const auto real = [&](const std::string& key) {
    return std::round(get(key)[0] * 1e6) / 1e6;
  };
  ModelConfig c;
  static const char* kPresets[] = {"paper", "desk", "micro", "custom"};
  c.preset = kPresets[std::min<std::size_t>(size("preset"), 3)];
  c.height = size("height");
  c.width = size("width");
  c.width_divisor = size("width_divisor");
  c.residual_repeats = as_sizes(get("residual_repeats"));
  c.encoder_hidden = size("encoder_hidden");
  c.decoder_hidden = size("decoder_hidden");
  c.embedding = size("embedding");
  c.heads = size("heads");
  c.scale_exponent = real("scale_exponent");
  c.encoder_dropout = real("encoder_dropout");
  c.decoder_dropout = real("decoder_dropout");
  c.ld = flag("ld");
  c.vf = flag("vf");
  c.cf = flag("cf");
  c.gi = flag("gi");
  c.gp = flag("gp");
  c.rectifier = flag("rectifier");
  c.control_points = size("control_points");
  c.localization_channels = as_sizes(get("localization_channels"));
  c.localization_hidden = size("localization_hidden");
  c.max_steps = size("max_steps");
  return c;
}

bool ModelConfig::operator==(const ModelConfig& other) const {
  return to_fields() == other.to_fields();
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng init(seed);
  if (config.rectifier)
    rectifier_.emplace(store_, "rectifier", config.rectifier_config(), init);
  encoder_ = Encoder<T>(store_, "encoder", config.encoder(), init);
  decoder_ = Decoder<T>(store_, "decoder", config.decoder(), init);
}

template <typename T>
Tensor<T> Model<T>::rectify(const Tensor<T>& image) const {
  if (image.shape() != Shape{config_.height, config_.width, 1})
    throw DimensionError("model expects " + std::to_string(config_.height) + "x" +
                         std::to_string(config_.width) + "x1 images, got " +
                         shape_str(image.shape()));
  return rectifier_ ? (*rectifier_)(image) : image;
}

template <typename T>
FeatureMap<T> Model<T>::encode(const Tensor<T>& image, Mode mode, Rng& rng) const {
  return encoder_(rectify(image), mode, rng);
}

template <typename T>
Tensor<T> Model<T>::logits(const Tensor<T>& image, const std::vector<std::size_t>& target,
                           Mode mode, Rng& rng) const {
  return decoder_.teacher_forced_logits(encode(image, mode, rng), target, mode, rng);
}

template <typename T>
DecodeResult Model<T>::recognize(const Tensor<T>& image) const {
  NoGradScope<T> no_grad;
  Rng unused(0);
  return decoder_.greedy_decode(encode(image, Mode::kEval, unused));
}

template class Model<float>;
template class Model<double>;

}  // namespace rceed
