#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace nanonet {

/// Incompatible tensor or graph shapes. Messages carry both shapes and,
/// when raised during graph execution, the offending node id.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid value or argument (bad label, non-finite gradient, bad config).
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense N x C x H x W array, row-major in that order. Single precision is
/// the training/inference type; the double instantiation exists for
/// finite-difference gradient checks.
template <typename T>
struct TensorT {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<T> data;

  TensorT() = default;
  TensorT(int n, int c, int h, int w)
      : shape{n, c, h, w},
        data(static_cast<size_t>(n) * c * h * w, T(0)) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw ShapeError("tensor dims must be >= 1, got " + shape_str());
  }

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  size_t size() const { return data.size(); }

  size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<size_t>(in) * c() + ic) * h() + iy) * w() + ix;
  }
  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const {
    return data[index(in, ic, iy, ix)];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  std::string shape_str() const {
    return std::to_string(shape[0]) + "x" + std::to_string(shape[1]) + "x" +
           std::to_string(shape[2]) + "x" + std::to_string(shape[3]);
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static TensorT zeros_like(const TensorT& o) {
    return TensorT(o.shape[0], o.shape[1], o.shape[2], o.shape[3]);
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

/// Trainable parameters of one conv or dense node.
/// conv: weights Cout x Cin x kh x kw; dense: out x in x 1 x 1.
template <typename T>
struct LayerParamsT {
  TensorT<T> weights;
  std::vector<T> bias;

  size_t scalar_count() const { return weights.size() + bias.size(); }
};

using LayerParams = LayerParamsT<float>;

}  // namespace nanonet
