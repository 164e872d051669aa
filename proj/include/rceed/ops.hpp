#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "rceed/tensor.hpp"

// Differentiable tensor operations. Every function records a backward rule
// on the active Tape when at least one input requires a gradient.
namespace rceed::ops {

// ---- linear algebra -------------------------------------------------------

// a[m x k] * b[k x n], or a * b^T with b[n x k] when transpose_b is set.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// ---- elementwise ----------------------------------------------------------
// Binary operations broadcast by the trailing-dimension rule: shapes are
// aligned on their last axes and each aligned pair must be equal or 1.

Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T>
Tensor<T> tanh(const Tensor<T>& a);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
template <typename T>
Tensor<T> log(const Tensor<T>& a);
// a * mask with a constant (non-differentiable) mask of a's shape.
template <typename T>
Tensor<T> mask_mul(const Tensor<T>& a, const std::vector<T>& mask);

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis);
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis);
template <typename T>
Tensor<T> max(const Tensor<T>& a, std::size_t axis);
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& a);
// Sum of a[i]^2 -> scalar.
template <typename T>
Tensor<T> sum_squares(const Tensor<T>& a);

// ---- shape manipulation ---------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis) {
  return concat(std::vector<Tensor<T>>(parts), axis);
}
// Splits `a` into `parts` equal pieces along `axis`.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t parts, std::size_t axis);
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

// ---- normalization / probability -----------------------------------------

// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a);
// Layer normalization over the last axis with population variance;
// epsilon sits under the square root. The bias is fixed at zero.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, T epsilon = T(1e-5));

// ---- indexing -------------------------------------------------------------

// Rows of table[V x D] at `indices` -> [n x D].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& indices);
// a[r][indices[r]] for each row -> [R].
template <typename T>
Tensor<T> pick(const Tensor<T>& a, const std::vector<std::size_t>& indices);

// ---- image operations (layout H x W x C) ---------------------------------

struct ConvGeometry {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 1, pad_w = 1;
};

// x[H x W x Cin], weight[Cout x kh x kw x Cin], bias[Cout] (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvGeometry geometry = {});

struct PoolGeometry {
  std::size_t kernel_h = 2, kernel_w = 2;
  std::size_t stride_h = 2, stride_w = 2;
  // Output extent ceil(in / stride) with the missing window split around
  // the input; padded cells never win the max.
  bool same_padding = true;
};

std::size_t pool_extent(std::size_t in, std::size_t kernel, std::size_t stride, bool same);
std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, PoolGeometry geometry = {});

// Samples image[H x W x C] at grid[Ho x Wo x 2] holding normalized (x, y)
// coordinates in [0, 1] (0 and 1 are the outermost pixel centres).
// Coordinates outside the image clamp to the border.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const Tensor<T>& grid);

// ---- non-differentiable helpers -------------------------------------------

// Index of the largest entry of each row of a[R x C] (ties -> lowest index).
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& a);

}  // namespace rceed::ops
