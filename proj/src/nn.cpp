#include "rceed/nn.hpp"

#include <cmath>

namespace rceed {

template <typename T>
Tensor<T> ParameterStore<T>::create(const std::string& name, Shape shape, ParamRole role) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  params_.push_back(Parameter<T>{name, t, role});
  return t;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
Tensor<T> ParameterStore<T>::get(const std::string& name) const {
  const auto* p = find(name);
  if (!p) throw IndexError("no parameter named '" + name + "'");
  return p->value;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
void init_uniform(Tensor<T>& t, double lo, double hi, Rng& rng) {
  for (auto& x : t.data()) x = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void init_xavier(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  init_uniform(t, -a, a, rng);
}

template <typename T>
void init_he(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
  init_uniform(t, -a, a, rng);
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::create(ParameterStore<T>& store, const std::string& name,
                                              std::size_t width) {
  LayerNormParams p{store.create(name, Shape{width}, ParamRole::kGain)};
  for (auto& g : p.gain.data()) g = T(1);
  return p;
}

DropoutSpec::DropoutSpec(double p_, Mode mode_) : p(p_), mode(mode_) {
  if (!(p >= 0.0 && p < 1.0))
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, const DropoutSpec& spec, Rng& rng) {
  if (spec.mode == Mode::kEval || spec.p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - spec.p));
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < spec.p ? T(0) : keep_scale;
  return ops::mask_mul(x, mask);
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = store.create(name + ".weight", Shape{out, in}, ParamRole::kWeight);
  init_xavier(l.weight, in, out, rng);
  if (with_bias) l.bias = store.create(name + ".bias", Shape{out}, ParamRole::kBias);
  return l;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = ops::matmul(x, weight, /*transpose_b=*/true);
  return bias.defined() ? ops::add(y, bias) : y;
}

template <typename T>
Embedding<T> Embedding<T>::create(ParameterStore<T>& store, const std::string& name,
                                  std::size_t vocab, std::size_t width, Rng& rng) {
  Embedding e{store.create(name, Shape{vocab, width}, ParamRole::kEmbedding)};
  init_uniform(e.table, -0.1, 0.1, rng);
  return e;
}

template <typename T>
Tensor<T> Embedding<T>::operator()(std::size_t token) const {
  return ops::gather_rows(table, {token});
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out, std::size_t kernel, Rng& rng) {
  Conv2d c;
  c.weight = store.create(name + ".weight", Shape{out, kernel, kernel, in}, ParamRole::kWeight);
  c.bias = store.create(name + ".bias", Shape{out}, ParamRole::kBias);
  init_he(c.weight, kernel * kernel * in, rng);
  const std::size_t pad = kernel / 2;
  c.geometry = ops::ConvGeometry{1, 1, pad, pad};
  return c;
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::create(ParameterStore<T>& store, const std::string& name,
                                          std::size_t in, std::size_t out, Rng& rng) {
  ResidualBlock b;
  b.conv_a = Conv2d<T>::create(store, name + ".conv_a", in, out, 3, rng);
  b.conv_b = Conv2d<T>::create(store, name + ".conv_b", out, out, 3, rng);
  // Residual branch starts at zero.
  for (auto& w : b.conv_b.weight.data()) w = T(0);
  if (in != out) b.projection = Conv2d<T>::create(store, name + ".shortcut", in, out, 1, rng);
  return b;
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> branch = conv_b(ops::relu(conv_a(x)));
  Tensor<T> shortcut = projection ? (*projection)(x) : x;
  return ops::add(shortcut, branch);
}

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t positions, std::size_t width) {
  if (width == 0 || width % 2 != 0)
    throw ConfigError("positional encoding width must be even, got " + std::to_string(width));
  Tensor<T> pe(Shape{positions, width});
  for (std::size_t pos = 0; pos < positions; ++pos)
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(width));
      pe[pos * width + 2 * i] = static_cast<T>(std::sin(angle));
      pe[pos * width + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  return pe;
}

#define RCEED_INSTANTIATE_NN(T)                                                       \
  template class ParameterStore<T>;                                                   \
  template void init_uniform(Tensor<T>&, double, double, Rng&);                       \
  template void init_xavier(Tensor<T>&, std::size_t, std::size_t, Rng&);             \
  template void init_he(Tensor<T>&, std::size_t, Rng&);                               \
  template struct LayerNormParams<T>;                                                 \
  template Tensor<T> dropout(const Tensor<T>&, const DropoutSpec&, Rng&);             \
  template struct Linear<T>;                                                          \
  template struct Embedding<T>;                                                       \
  template struct Conv2d<T>;                                                          \
  template struct ResidualBlock<T>;                                                   \
  template Tensor<T> sinusoidal_pe<T>(std::size_t, std::size_t);

RCEED_INSTANTIATE_NN(float)
RCEED_INSTANTIATE_NN(double)

}  // namespace rceed
