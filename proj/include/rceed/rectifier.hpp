#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "rceed/nn.hpp"

namespace rceed {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Control points in normalized image coordinates, [0, 1]^2.
struct ControlPoints {
  std::vector<Point2> points;

  std::size_t size() const { return points.size(); }
  // K/2 points evenly spaced along the top edge followed by K/2 along the
  // bottom edge, inset by `margin`.
  static ControlPoints target(std::size_t count, double margin = 0.05);
  template <typename T>
  Tensor<T> to_tensor() const;
  template <typename T>
  static ControlPoints from_tensor(const Tensor<T>& t);
};

// Thin-plate-spline warp f: target frame -> source frame,
//   f(p) = affine * [1, x, y]^T + sum_k kernel_k * U(|p - c_k|),  U(r) = r^2 log r^2.
struct TpsMapping {
  std::array<std::array<double, 3>, 2> affine{};  // row per output coordinate
  std::vector<std::array<double, 2>> kernel;      // K coefficients per output coordinate
  ControlPoints centers;                          // the target-frame control points

  Point2 operator()(Point2 p) const;
};

double tps_kernel(double squared_distance);

// Solves the (K+3) x (K+3) bending-energy system in double precision so
// that mapping(dst_k) = src_k. Throws SolveError when the system is
// singular (e.g. collinear or repeated target points).
TpsMapping tps_solve(const ControlPoints& src, const ControlPoints& dst);

// Linear map from source control points to the sampling grid: for a fixed
// target frame, grid[HW x 2] = basis[HW x K] * src[K x 2].
Tensor<double> tps_grid_basis(const ControlPoints& dst, std::size_t height, std::size_t width);

// Grid over the target frame (pixel centres at j/(W-1), i/(H-1)).
template <typename T>
Tensor<T> identity_grid(std::size_t height, std::size_t width);

struct RectifierConfig {
  std::size_t height = 48;
  std::size_t width = 160;
  std::size_t control_points = 20;
  double margin = 0.05;
  std::vector<std::size_t> channels{16, 32, 64, 128};
  std::size_t hidden = 128;

  void validate() const;
};

// Localization CNN -> source control points -> TPS grid -> bilinear sample.
template <typename T>
class Rectifier {
 public:
  Rectifier() = default;
  Rectifier(ParameterStore<T>& store, const std::string& name, const RectifierConfig& config,
            Rng& init_rng);

  const RectifierConfig& config() const { return config_; }
  const ControlPoints& target_points() const { return target_; }

  // image[H x W x 1] -> [K x 2] source points in [0, 1].
  Tensor<T> localize(const Tensor<T>& image) const;
  // src[K x 2] -> grid[H x W x 2]
  Tensor<T> grid(const Tensor<T>& src) const;
  Tensor<T> operator()(const Tensor<T>& image) const;

  std::vector<Conv2d<T>> convs;
  Linear<T> fc1, fc2;

 private:
  RectifierConfig config_;
  ControlPoints target_;
  Tensor<T> basis_;  // constant [HW x K]
};

}  // namespace rceed
