#include "rceed/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace rceed::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
void record(const Tensor<T>& out, std::vector<NodePtr<T>> inputs, std::function<void()> fn) {
  Tape<T>::active()->record(std::move(inputs), out.node(), std::move(fn));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
}

// Maps each output element to its source element under trailing broadcast.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t n = numel(out);
  std::vector<std::size_t> index(n);
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_stride[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = src;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      src += in_stride[k];
      if (counter[k] < out[k]) break;
      src -= in_stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  return index;
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(out_shape);
  const std::size_t n = out.size();
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  auto ia = std::make_shared<std::vector<std::size_t>>();
  auto ib = std::make_shared<std::vector<std::size_t>>();
  if (!same_a) *ia = broadcast_index(out_shape, a.shape());
  if (!same_b) *ib = broadcast_index(out_shape, b.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  if (same_a && same_b) {
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> x(pa, n), y(pb, n);
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> o(po, n);
    switch (kind) {
      case BinaryKind::kAdd: o = x + y; break;
      case BinaryKind::kSub: o = x - y; break;
      case BinaryKind::kMul: o = x * y; break;
    }
  }
  for (std::size_t i = 0; i < n && !(same_a && same_b); ++i) {
    const T x = pa[same_a ? i : (*ia)[i]];
    const T y = pb[same_b ? i : (*ib)[i]];
    switch (kind) {
      case BinaryKind::kAdd: po[i] = x + y; break;
      case BinaryKind::kSub: po[i] = x - y; break;
      case BinaryKind::kMul: po[i] = x * y; break;
    }
  }
  if (should_record<T>({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    record(out, {an, bn}, [an, bn, on, ia, ib, same_a, same_b, kind] {
      const auto& g = on->grad;
      const std::size_t n = g.size();
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = same_a ? i : (*ia)[i];
          const T d = kind == BinaryKind::kMul ? g[i] * bn->data[same_b ? i : (*ib)[i]] : g[i];
          ga[j] += d;
        }
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t j = same_b ? i : (*ib)[i];
          T d = g[i];
          if (kind == BinaryKind::kSub) d = -d;
          if (kind == BinaryKind::kMul) d *= an->data[same_a ? i : (*ia)[i]];
          gb[j] += d;
        }
      }
    });
  }
  return out;
}

// Unary op with derivative expressed through (input, output).
template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& a, F forward, D derivative) {
  Tensor<T> out(a.shape());
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = forward(pa[i]);
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on, derivative] {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i)
        ga[i] += on->grad[i] * derivative(an->data[i], on->data[i]);
    });
  }
  return out;
}

// Decomposes `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit around(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t k = 0; k < axis; ++k) s.outer *= shape[k];
  for (std::size_t k = axis + 1; k < shape.size(); ++k) s.inner *= shape[k];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t k = 0; k < shape.size(); ++k)
    if (k != axis) out.push_back(shape[k]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1);
  const std::size_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk)
    throw DimensionError("matmul inner extents disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  Tensor<T> out(Shape{m, n});
  CMapMat<T> A(a.ptr(), m, k);
  CMapMat<T> B(b.ptr(), b.dim(0), b.dim(1));
  MapMat<T> C(out.ptr(), m, n);
  if (transpose_b)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A * B;
  if (should_record<T>({&a, &b})) {
    auto an = a.node(), bn = b.node(), on = out.node();
    record(out, {an, bn}, [an, bn, on, m, k, n, transpose_b] {
      CMapMat<T> G(on->grad.data(), m, n);
      CMapMat<T> A(an->data.data(), m, k);
      CMapMat<T> B(bn->data.data(), bn->shape[0], bn->shape[1]);
      if (an->requires_grad) {
        MapMat<T> GA(an->ensure_grad().data(), m, k);
        if (transpose_b)
          GA.noalias() += G * B;
        else
          GA.noalias() += G * B.transpose();
      }
      if (bn->requires_grad) {
        MapMat<T> GB(bn->ensure_grad().data(), bn->shape[0], bn->shape[1]);
        if (transpose_b)
          GB.noalias() += G.transpose() * A;
        else
          GB.noalias() += A.transpose() * G;
      }
    });
  }
  return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t ea = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t eb = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    out[k] = std::max(ea, eb);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(
      a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        // Branches keep exp() from overflowing for large |x|.
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> mask_mul(const Tensor<T>& a, const std::vector<T>& mask) {
  if (mask.size() != a.size())
    throw DimensionError("mask of " + std::to_string(mask.size()) + " values for tensor " +
                         shape_str(a.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * mask[i];
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    auto m = std::make_shared<std::vector<T>>(mask);
    record(out, {an}, [an, on, m] {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i] * (*m)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = around(a.shape(), axis);
  Tensor<T> out(drop_axis(a.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += a[(o * s.extent + e) * s.inner + i];
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on, s] {
      auto& ga = an->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i)
            ga[(o * s.extent + e) * s.inner + i] += on->grad[o * s.inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis) {
  const std::size_t extent = around(a.shape(), axis).extent;
  return scale(sum(a, axis), T(1) / static_cast<T>(extent));
}

template <typename T>
Tensor<T> max(const Tensor<T>& a, std::size_t axis) {
  const AxisSplit s = around(a.shape(), axis);
  Tensor<T> out(drop_axis(a.shape(), axis));
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t j = (o * s.extent + e) * s.inner + i;
        if (a[j] > a[best]) best = j;
      }
      out[o * s.inner + i] = a[best];
      (*arg)[o * s.inner + i] = best;
    }
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on, arg] {
      auto& ga = an->ensure_grad();
      for (std::size_t k = 0; k < arg->size(); ++k) ga[(*arg)[k]] += on->grad[k];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  double total = 0;
  for (T x : a.data()) total += x;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on] {
      auto& ga = an->ensure_grad();
      const T g = on->grad[0];
      for (auto& x : ga) x += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& a) {
  double total = 0;
  for (T x : a.data()) total += static_cast<double>(x) * x;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on] {
      auto& ga = an->ensure_grad();
      const T g2 = 2 * on->grad[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g2 * an->data[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on] {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k)
      if (k != axis && s[k] != first[k]) ok = false;
    if (!ok)
      throw DimensionError("concat shapes disagree: " + shape_str(first) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  Tensor<T> out(out_shape);
  const AxisSplit os = around(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t ext = p.shape()[axis];
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(p.ptr() + o * ext * os.inner, ext * os.inner,
                  out.ptr() + (o * os.extent + offset) * os.inner);
    offset += ext;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && Tape<T>::active()) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    record(out, nodes, [nodes, on, offsets, os, axis] {
      for (std::size_t q = 0; q < nodes.size(); ++q) {
        if (!nodes[q]->requires_grad) continue;
        auto& g = nodes[q]->ensure_grad();
        const std::size_t ext = nodes[q]->shape[axis];
        for (std::size_t o = 0; o < os.outer; ++o) {
          const T* src = on->grad.data() + (o * os.extent + offsets[q]) * os.inner;
          T* dst = g.data() + o * ext * os.inner;
          for (std::size_t i = 0; i < ext * os.inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  const AxisSplit s = around(a.shape(), axis);
  if (length == 0 || start + length > s.extent)
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis " + std::to_string(axis) + " of " +
                         shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(a.ptr() + (o * s.extent + start) * s.inner, length * s.inner,
                out.ptr() + o * length * s.inner);
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on, s, start, length] {
      auto& ga = an->ensure_grad();
      for (std::size_t o = 0; o < s.outer; ++o) {
        const T* src = on->grad.data() + o * length * s.inner;
        T* dst = ga.data() + (o * s.extent + start) * s.inner;
        for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t parts, std::size_t axis) {
  const AxisSplit s = around(a.shape(), axis);
  if (parts == 0 || s.extent % parts != 0)
    throw DimensionError("cannot split axis " + std::to_string(axis) + " of " +
                         shape_str(a.shape()) + " into " + std::to_string(parts) + " parts");
  const std::size_t len = s.extent / parts;
  std::vector<Tensor<T>> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) out.push_back(slice(a, axis, p * len, len));
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.ptr() + r * d;
    T* y = out.ptr() + r * d;
    const T m = *std::max_element(x, x + d);
    T z = 0;
    for (std::size_t i = 0; i < d; ++i) z += (y[i] = std::exp(x[i] - m));
    for (std::size_t i = 0; i < d; ++i) y[i] /= z;
  }
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on, d, rows] {
      auto& ga = an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = on->data.data() + r * d;
        const T* g = on->grad.data() + r * d;
        T dot = 0;
        for (std::size_t i = 0; i < d; ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < d; ++i) ga[r * d + i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  Tensor<T> out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.ptr() + r * d;
    T* y = out.ptr() + r * d;
    const T m = *std::max_element(x, x + d);
    T z = 0;
    for (std::size_t i = 0; i < d; ++i) z += std::exp(x[i] - m);
    const T lz = m + std::log(z);
    for (std::size_t i = 0; i < d; ++i) y[i] = x[i] - lz;
  }
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on, d, rows] {
      auto& ga = an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = on->data.data() + r * d;
        const T* g = on->grad.data() + r * d;
        T gsum = 0;
        for (std::size_t i = 0; i < d; ++i) gsum += g[i];
        for (std::size_t i = 0; i < d; ++i) ga[r * d + i] += g[i] - std::exp(y[i]) * gsum;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, T epsilon) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d)
    throw DimensionError("layernorm gain " + shape_str(gain.shape()) + " for input " +
                         shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv_sigma = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * d;
    T mu = 0;
    for (std::size_t i = 0; i < d; ++i) mu += in[i];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + epsilon);
    (*inv_sigma)[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (in[i] - mu) * inv;
      (*xhat)[r * d + i] = h;
      out[r * d + i] = h * gain[i];
    }
  }
  if (should_record<T>({&x, &gain})) {
    auto xn = x.node(), gn = gain.node(), on = out.node();
    record(out, {xn, gn}, [xn, gn, on, xhat, inv_sigma, d, rows] {
      const auto& g = on->grad;
      if (gn->requires_grad) {
        auto& gg = gn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < d; ++i) gg[i] += g[r * d + i] * (*xhat)[r * d + i];
      }
      if (xn->requires_grad) {
        auto& gx = xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_g = 0, mean_gh = 0;
          for (std::size_t i = 0; i < d; ++i) {
            const T gh = g[r * d + i] * gn->data[i];
            mean_g += gh;
            mean_gh += gh * (*xhat)[r * d + i];
          }
          mean_g /= static_cast<T>(d);
          mean_gh /= static_cast<T>(d);
          const T inv = (*inv_sigma)[r];
          for (std::size_t i = 0; i < d; ++i) {
            const T gh = g[r * d + i] * gn->data[i];
            gx[r * d + i] += inv * (gh - mean_g - (*xhat)[r * d + i] * mean_gh);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& indices) {
  require_rank(table.shape(), 2, "gather_rows");
  const std::size_t v = table.dim(0), d = table.dim(1);
  if (indices.empty()) throw DimensionError("gather_rows with no indices");
  for (auto i : indices)
    if (i >= v)
      throw IndexError("row " + std::to_string(i) + " outside table of " + std::to_string(v) +
                       " rows");
  Tensor<T> out(Shape{indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(table.ptr() + indices[r] * d, d, out.ptr() + r * d);
  if (should_record<T>({&table})) {
    auto tn = table.node(), on = out.node();
    record(out, {tn}, [tn, on, indices, d] {
      auto& gt = tn->ensure_grad();
      for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t i = 0; i < d; ++i) gt[indices[r] * d + i] += on->grad[r * d + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> pick(const Tensor<T>& a, const std::vector<std::size_t>& indices) {
  require_rank(a.shape(), 2, "pick");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (indices.size() != rows)
    throw DimensionError("pick needs one index per row: " + std::to_string(indices.size()) +
                         " for " + shape_str(a.shape()));
  for (auto i : indices)
    if (i >= cols) throw IndexError("pick column " + std::to_string(i) + " out of range");
  Tensor<T> out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = a[r * cols + indices[r]];
  if (should_record<T>({&a})) {
    auto an = a.node(), on = out.node();
    record(out, {an}, [an, on, indices, cols] {
      auto& ga = an->ensure_grad();
      for (std::size_t r = 0; r < indices.size(); ++r) ga[r * cols + indices[r]] += on->grad[r];
    });
  }
  return out;
}

std::size_t conv_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel || stride == 0)
    throw DimensionError("convolution kernel " + std::to_string(kernel) + " exceeds padded extent " +
                         std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t pool_extent(std::size_t in, std::size_t kernel, std::size_t stride, bool same) {
  if (stride == 0 || kernel == 0) throw DimensionError("pooling kernel and stride must be positive");
  if (same) return (in + stride - 1) / stride;
  if (in < kernel)
    throw DimensionError("pooling kernel " + std::to_string(kernel) + " exceeds extent " +
                         std::to_string(in));
  return (in - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvGeometry geo) {
  require_rank(x.shape(), 3, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t cout = weight.dim(0), kh = weight.dim(1), kw = weight.dim(2);
  if (weight.dim(3) != cin)
    throw DimensionError("conv2d weight " + shape_str(weight.shape()) + " for input " +
                         shape_str(x.shape()));
  if (bias.defined() && bias.size() != cout)
    throw DimensionError("conv2d bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(cout) + " output channels");
  const std::size_t oh = conv_extent(h, kh, geo.stride_h, geo.pad_h);
  const std::size_t ow = conv_extent(w, kw, geo.stride_w, geo.pad_w);
  const std::size_t k = kh * kw * cin;
  const std::size_t pixels = oh * ow;

  const bool pointwise = kh == 1 && kw == 1 && geo.stride_h == 1 && geo.stride_w == 1 &&
                         geo.pad_h == 0 && geo.pad_w == 0;
  auto col = std::make_shared<std::vector<T>>();
  if (!pointwise) {
    col->assign(pixels * k, T(0));
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* row = col->data() + (oy * ow + ox) * k;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const long iy = static_cast<long>(oy * geo.stride_h + ky) - static_cast<long>(geo.pad_h);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long ix = static_cast<long>(ox * geo.stride_w + kx) - static_cast<long>(geo.pad_w);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            std::copy_n(x.ptr() + (iy * w + ix) * cin, cin, row + (ky * kw + kx) * cin);
          }
        }
      }
  }
  const T* col_ptr = pointwise ? x.ptr() : col->data();

  Tensor<T> out(Shape{oh, ow, cout});
  {
    CMapMat<T> C(col_ptr, pixels, k);
    CMapMat<T> W(weight.ptr(), cout, k);
    MapMat<T> O(out.ptr(), pixels, cout);
    O.noalias() = C * W.transpose();
    if (bias.defined()) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.ptr(), cout);
      O.rowwise() += b;
    }
  }
  if (should_record<T>({&x, &weight, &bias})) {
    auto xn = x.node(), wn = weight.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    std::vector<NodePtr<T>> inputs{xn, wn};
    if (bn) inputs.push_back(bn);
    record(out, inputs, [=] {
      CMapMat<T> G(on->grad.data(), pixels, cout);
      const T* cp = pointwise ? xn->data.data() : col->data();
      CMapMat<T> C(cp, pixels, k);
      if (wn->requires_grad) {
        MapMat<T> GW(wn->ensure_grad().data(), cout, k);
        GW.noalias() += G.transpose() * C;
      }
      if (bn && bn->requires_grad) {
        // Row-order accumulation; Eigen's colwise reduction depends on buffer alignment.
        std::vector<T> sums(cout, T(0));
        const T* g = on->grad.data();
        for (std::size_t p = 0; p < pixels; ++p)
          for (std::size_t c = 0; c < cout; ++c) sums[c] += g[p * cout + c];
        auto& gb = bn->ensure_grad();
        for (std::size_t c = 0; c < cout; ++c) gb[c] += sums[c];
      }
      if (xn->requires_grad) {
        CMapMat<T> W(wn->data.data(), cout, k);
        auto& gx = xn->ensure_grad();
        if (pointwise) {
          MapMat<T> GX(gx.data(), pixels, k);
          GX.noalias() += G * W;
          return;
        }
        RowMat<T> dcol = G * W;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T* row = dcol.data() + (oy * ow + ox) * k;
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long iy =
                  static_cast<long>(oy * geo.stride_h + ky) - static_cast<long>(geo.pad_h);
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long ix =
                    static_cast<long>(ox * geo.stride_w + kx) - static_cast<long>(geo.pad_w);
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                T* dst = gx.data() + (iy * w + ix) * cin;
                const T* src = row + (ky * kw + kx) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
              }
            }
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, PoolGeometry geo) {
  require_rank(x.shape(), 3, "maxpool2d");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t oh = pool_extent(h, geo.kernel_h, geo.stride_h, geo.same_padding);
  const std::size_t ow = pool_extent(w, geo.kernel_w, geo.stride_w, geo.same_padding);
  std::size_t pad_top = 0, pad_left = 0;
  if (geo.same_padding) {
    const std::size_t need_h = (oh - 1) * geo.stride_h + geo.kernel_h;
    const std::size_t need_w = (ow - 1) * geo.stride_w + geo.kernel_w;
    pad_top = need_h > h ? (need_h - h) / 2 : 0;
    pad_left = need_w > w ? (need_w - w) / 2 : 0;
  }
  Tensor<T> out(Shape{oh, ow, c});
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ch = 0; ch < c; ++ch) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_index = 0;
        for (std::size_t ky = 0; ky < geo.kernel_h; ++ky) {
          const long iy = static_cast<long>(oy * geo.stride_h + ky) - static_cast<long>(pad_top);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < geo.kernel_w; ++kx) {
            const long ix = static_cast<long>(ox * geo.stride_w + kx) - static_cast<long>(pad_left);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t j = (iy * w + ix) * c + ch;
            if (x[j] > best) {
              best = x[j];
              best_index = j;
            }
          }
        }
        const std::size_t o = (oy * ow + ox) * c + ch;
        out[o] = best;
        (*arg)[o] = best_index;
      }
  if (should_record<T>({&x})) {
    auto xn = x.node(), on = out.node();
    record(out, {xn}, [xn, on, arg] {
      auto& gx = xn->ensure_grad();
      for (std::size_t o = 0; o < arg->size(); ++o) gx[(*arg)[o]] += on->grad[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& image, const Tensor<T>& grid) {
  require_rank(image.shape(), 3, "bilinear_sample image");
  require_rank(grid.shape(), 3, "bilinear_sample grid");
  if (grid.dim(2) != 2) throw DimensionError("sampling grid must end in 2 coordinates");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t oh = grid.dim(0), ow = grid.dim(1);
  const std::size_t n = oh * ow;
  Tensor<T> out(Shape{oh, ow, c});

  struct Tap {
    std::size_t x0, x1, y0, y1;
    T wx, wy;
    bool clamp_x, clamp_y;
  };
  auto taps = std::make_shared<std::vector<Tap>>(n);
  const T max_x = static_cast<T>(w - 1), max_y = static_cast<T>(h - 1);
  for (std::size_t p = 0; p < n; ++p) {
    T px = grid[2 * p] * max_x;
    T py = grid[2 * p + 1] * max_y;
    Tap t{};
    t.clamp_x = !(px >= 0 && px <= max_x);
    t.clamp_y = !(py >= 0 && py <= max_y);
    px = std::clamp(px, T(0), max_x);
    py = std::clamp(py, T(0), max_y);
    t.x0 = static_cast<std::size_t>(std::floor(px));
    t.y0 = static_cast<std::size_t>(std::floor(py));
    t.x1 = std::min(t.x0 + 1, w - 1);
    t.y1 = std::min(t.y0 + 1, h - 1);
    t.wx = px - static_cast<T>(t.x0);
    t.wy = py - static_cast<T>(t.y0);
    (*taps)[p] = t;
    const T* i00 = image.ptr() + (t.y0 * w + t.x0) * c;
    const T* i01 = image.ptr() + (t.y0 * w + t.x1) * c;
    const T* i10 = image.ptr() + (t.y1 * w + t.x0) * c;
    const T* i11 = image.ptr() + (t.y1 * w + t.x1) * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T top = i00[ch] + t.wx * (i01[ch] - i00[ch]);
      const T bottom = i10[ch] + t.wx * (i11[ch] - i10[ch]);
      out[p * c + ch] = top + t.wy * (bottom - top);
    }
  }
  if (should_record<T>({&image, &grid})) {
    auto in = image.node(), gn = grid.node(), on = out.node();
    record(out, {in, gn}, [in, gn, on, taps, w, c, max_x, max_y] {
      const auto& gout = on->grad;
      const auto& img = in->data;
      T* gimg = in->requires_grad ? in->ensure_grad().data() : nullptr;
      T* ggrid = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
      for (std::size_t p = 0; p < taps->size(); ++p) {
        const Tap& t = (*taps)[p];
        const std::size_t j00 = (t.y0 * w + t.x0) * c, j01 = (t.y0 * w + t.x1) * c;
        const std::size_t j10 = (t.y1 * w + t.x0) * c, j11 = (t.y1 * w + t.x1) * c;
        T dx = 0, dy = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T g = gout[p * c + ch];
          if (gimg) {
            gimg[j00 + ch] += g * (1 - t.wx) * (1 - t.wy);
            gimg[j01 + ch] += g * t.wx * (1 - t.wy);
            gimg[j10 + ch] += g * (1 - t.wx) * t.wy;
            gimg[j11 + ch] += g * t.wx * t.wy;
          }
          const T top = img[j00 + ch] + t.wx * (img[j01 + ch] - img[j00 + ch]);
          const T bottom = img[j10 + ch] + t.wx * (img[j11 + ch] - img[j10 + ch]);
          dx += g * ((1 - t.wy) * (img[j01 + ch] - img[j00 + ch]) +
                     t.wy * (img[j11 + ch] - img[j10 + ch]));
          dy += g * (bottom - top);
        }
        if (ggrid) {
          if (!t.clamp_x) ggrid[2 * p] += dx * max_x;
          if (!t.clamp_y) ggrid[2 * p + 1] += dy * max_y;
        }
      }
    });
  }
  return out;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& a) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < cols; ++i)
      if (a[r * cols + i] > a[r * cols + best]) best = i;
    out[r] = best;
  }
  return out;
}

#define RCEED_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool);                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> sigmoid(const Tensor<T>&);                                               \
  template Tensor<T> tanh(const Tensor<T>&);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> exp(const Tensor<T>&);                                                   \
  template Tensor<T> log(const Tensor<T>&);                                                   \
  template Tensor<T> mask_mul(const Tensor<T>&, const std::vector<T>&);                       \
  template Tensor<T> sum(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> max(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> sum_all(const Tensor<T>&);                                               \
  template Tensor<T> mean_all(const Tensor<T>&);                                              \
  template Tensor<T> sum_squares(const Tensor<T>&);                                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                      \
  template std::vector<Tensor<T>> split(const Tensor<T>&, std::size_t, std::size_t);          \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);          \
  template Tensor<T> softmax(const Tensor<T>&);                                               \
  template Tensor<T> log_softmax(const Tensor<T>&);                                           \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, T);                        \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::size_t>&);          \
  template Tensor<T> pick(const Tensor<T>&, const std::vector<std::size_t>&);                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                            ConvGeometry);                                                    \
  template Tensor<T> maxpool2d(const Tensor<T>&, PoolGeometry);                               \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                     \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&);

RCEED_INSTANTIATE_OPS(float)
RCEED_INSTANTIATE_OPS(double)

}  // namespace rceed::ops
