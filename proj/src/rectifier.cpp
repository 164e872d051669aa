#include "rceed/rectifier.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

namespace rceed {

ControlPoints ControlPoints::target(std::size_t count, double margin) {
  if (count < 4 || count % 2 != 0)
    throw ConfigError("control point count must be even and >= 4, got " + std::to_string(count));
  ControlPoints cp;
  const std::size_t per_edge = count / 2;
  for (double y : {margin, 1.0 - margin})
    for (std::size_t k = 0; k < per_edge; ++k) {
      const double x =
          margin + (1.0 - 2.0 * margin) * static_cast<double>(k) / static_cast<double>(per_edge - 1);
      cp.points.push_back({x, y});
    }
  return cp;
}

template <typename T>
Tensor<T> ControlPoints::to_tensor() const {
  Tensor<T> t(Shape{points.size(), 2});
  for (std::size_t k = 0; k < points.size(); ++k) {
    t[2 * k] = static_cast<T>(points[k].x);
    t[2 * k + 1] = static_cast<T>(points[k].y);
  }
  return t;
}

template <typename T>
ControlPoints ControlPoints::from_tensor(const Tensor<T>& t) {
  if (t.rank() != 2 || t.dim(1) != 2) throw DimensionError("control points must be [K x 2]");
  ControlPoints cp;
  for (std::size_t k = 0; k < t.dim(0); ++k)
    cp.points.push_back({static_cast<double>(t[2 * k]), static_cast<double>(t[2 * k + 1])});
  return cp;
}

double tps_kernel(double squared_distance) {
  return squared_distance > 0.0 ? squared_distance * std::log(squared_distance) : 0.0;
}

Point2 TpsMapping::operator()(Point2 p) const {
  Point2 out;
  double* dst[2] = {&out.x, &out.y};
  for (int d = 0; d < 2; ++d) *dst[d] = affine[d][0] + affine[d][1] * p.x + affine[d][2] * p.y;
  for (std::size_t k = 0; k < kernel.size(); ++k) {
    const double dx = p.x - centers.points[k].x, dy = p.y - centers.points[k].y;
    const double u = tps_kernel(dx * dx + dy * dy);
    out.x += kernel[k][0] * u;
    out.y += kernel[k][1] * u;
  }
  return out;
}

namespace {

Eigen::MatrixXd system_matrix(const ControlPoints& dst) {
  const Eigen::Index k = static_cast<Eigen::Index>(dst.size());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(k + 3, k + 3);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& pi = dst.points[i];
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& pj = dst.points[j];
      const double dx = pi.x - pj.x, dy = pi.y - pj.y;
      l(i, j) = tps_kernel(dx * dx + dy * dy);
    }
    l(i, k) = l(k, i) = 1.0;
    l(i, k + 1) = l(k + 1, i) = pi.x;
    l(i, k + 2) = l(k + 2, i) = pi.y;
  }
  return l;
}

// Inverse of the system matrix, refusing near-singular systems.
Eigen::MatrixXd checked_inverse(const ControlPoints& dst) {
  if (dst.size() < 3) throw SolveError("thin-plate spline needs at least 3 control points", 0.0);
  const Eigen::MatrixXd l = system_matrix(dst);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(l);
  const auto& s = svd.singularValues();
  const double smallest = s(s.size() - 1);
  const double condition = smallest > 0.0 ? s(0) / smallest : INFINITY;
  if (!(condition < 1e12)) {
    std::ostringstream os;
    os << "thin-plate spline system is singular (condition number " << condition
       << "); target control points may be collinear or repeated";
    throw SolveError(os.str(), condition);
  }
  return l.inverse();
}

}  // namespace

TpsMapping tps_solve(const ControlPoints& src, const ControlPoints& dst) {
  if (src.size() != dst.size())
    throw DimensionError("source has " + std::to_string(src.size()) + " control points, target " +
                         std::to_string(dst.size()));
  const Eigen::Index k = static_cast<Eigen::Index>(dst.size());
  const Eigen::MatrixXd inverse = checked_inverse(dst);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k + 3, 2);
  for (Eigen::Index i = 0; i < k; ++i) {
    rhs(i, 0) = src.points[i].x;
    rhs(i, 1) = src.points[i].y;
  }
  const Eigen::MatrixXd sol = inverse * rhs;
  TpsMapping m;
  m.centers = dst;
  m.kernel.resize(dst.size());
  for (Eigen::Index i = 0; i < k; ++i) m.kernel[i] = {sol(i, 0), sol(i, 1)};
  for (int d = 0; d < 2; ++d)
    for (int c = 0; c < 3; ++c) m.affine[d][c] = sol(k + c, d);
  return m;
}

Tensor<double> tps_grid_basis(const ControlPoints& dst, std::size_t height, std::size_t width) {
  if (height < 2 || width < 2) throw DimensionError("sampling grid must be at least 2 x 2");
  const Eigen::Index k = static_cast<Eigen::Index>(dst.size());
  const Eigen::MatrixXd inverse = checked_inverse(dst);
  const Eigen::Index pixels = static_cast<Eigen::Index>(height * width);
  Eigen::MatrixXd phi(pixels, k + 3);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(i * width + j);
      const double x = static_cast<double>(j) / static_cast<double>(width - 1);
      const double y = static_cast<double>(i) / static_cast<double>(height - 1);
      for (Eigen::Index c = 0; c < k; ++c) {
        const double dx = x - dst.points[c].x, dy = y - dst.points[c].y;
        phi(row, c) = tps_kernel(dx * dx + dy * dy);
      }
      phi(row, k) = 1.0;
      phi(row, k + 1) = x;
      phi(row, k + 2) = y;
    }
  const Eigen::MatrixXd basis = phi * inverse.leftCols(k);
  Tensor<double> out(Shape{height * width, dst.size()});
  for (Eigen::Index r = 0; r < pixels; ++r)
    for (Eigen::Index c = 0; c < k; ++c) out[r * k + c] = basis(r, c);
  return out;
}

template <typename T>
Tensor<T> identity_grid(std::size_t height, std::size_t width) {
  Tensor<T> g(Shape{height, width, 2});
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j) {
      g[(i * width + j) * 2] = static_cast<T>(static_cast<double>(j) / static_cast<double>(width - 1));
      g[(i * width + j) * 2 + 1] =
          static_cast<T>(static_cast<double>(i) / static_cast<double>(height - 1));
    }
  return g;
}

void RectifierConfig::validate() const {
  if (control_points < 4 || control_points % 2)
    throw ConfigError("rectifier needs an even number (>= 4) of control points");
  if (channels.empty() || hidden == 0) throw ConfigError("rectifier localization net is empty");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    h = ops::pool_extent(h, 2, 2, true);
    w = ops::pool_extent(w, 2, 2, true);
  }
  if (h == 0 || w == 0) throw ConfigError("image too small for the localization net");
}

template <typename T>
Rectifier<T>::Rectifier(ParameterStore<T>& store, const std::string& name,
                        const RectifierConfig& config, Rng& init_rng)
    : config_(config), target_(ControlPoints::target(config.control_points, config.margin)) {
  config.validate();
  std::size_t in = 1, h = config.height, w = config.width;
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    convs.push_back(
        Conv2d<T>::create(store, name + ".conv" + std::to_string(i), in, config.channels[i], 3,
                          init_rng));
    in = config.channels[i];
    h = ops::pool_extent(h, 2, 2, true);
    w = ops::pool_extent(w, 2, 2, true);
  }
  fc1 = Linear<T>::create(store, name + ".fc1", h * w * in, config.hidden, init_rng);
  fc2 = Linear<T>::create(store, name + ".fc2", config.hidden, 2 * config.control_points, init_rng);
  // Start from the identity warp: zero weights, bias = logit(target points).
  for (auto& x : fc2.weight.data()) x = T(0);
  for (std::size_t k = 0; k < target_.size(); ++k) {
    const auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    fc2.bias[2 * k] = static_cast<T>(logit(target_.points[k].x));
    fc2.bias[2 * k + 1] = static_cast<T>(logit(target_.points[k].y));
  }
  basis_ = tps_grid_basis(target_, config.height, config.width).template cast<T>();
}

template <typename T>
Tensor<T> Rectifier<T>::localize(const Tensor<T>& image) const {
  if (image.shape() != Shape{config_.height, config_.width, 1})
    throw DimensionError("rectifier expects a " + std::to_string(config_.height) + "x" +
                         std::to_string(config_.width) + "x1 image, got " +
                         shape_str(image.shape()));
  Tensor<T> x = image;
  for (const auto& conv : convs) x = ops::maxpool2d(ops::relu(conv(x)));
  x = ops::reshape(x, Shape{1, x.size()});
  x = ops::sigmoid(fc2(ops::relu(fc1(x))));
  return ops::reshape(x, Shape{config_.control_points, 2});
}

template <typename T>
Tensor<T> Rectifier<T>::grid(const Tensor<T>& src) const {
  return ops::reshape(ops::matmul(basis_, src), Shape{config_.height, config_.width, 2});
}

template <typename T>
Tensor<T> Rectifier<T>::operator()(const Tensor<T>& image) const {
  return ops::bilinear_sample(image, grid(localize(image)));
}

template Tensor<float> ControlPoints::to_tensor<float>() const;
template Tensor<double> ControlPoints::to_tensor<double>() const;
template ControlPoints ControlPoints::from_tensor<float>(const Tensor<float>&);
template ControlPoints ControlPoints::from_tensor<double>(const Tensor<double>&);
template Tensor<float> identity_grid<float>(std::size_t, std::size_t);
template Tensor<double> identity_grid<double>(std::size_t, std::size_t);
template class Rectifier<float>;
template class Rectifier<double>;

}  // namespace rceed
