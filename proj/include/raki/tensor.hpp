#pragma once

#include <Eigen/Core>

#include <complex>
#include <string>
#include <vector>

#include "errors.hpp"

namespace raki {

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-major real tensor (channels, height, width). Stored as a row-major
/// matrix with one row per channel so that whole channels are contiguous and
/// convolutions reduce to matrix products.
template <typename Scalar>
class Tensor3 {
public:
  using Matrix = RowMajorMatrix<Scalar>;

  Tensor3() = default;
  Tensor3(Eigen::Index channels, Eigen::Index height, Eigen::Index width)
      : height_(height), width_(width), data_(Matrix::Zero(channels, height * width)) {}

  static Tensor3 Zero(Eigen::Index c, Eigen::Index h, Eigen::Index w) { return Tensor3(c, h, w); }

  Eigen::Index channels() const { return data_.rows(); }
  Eigen::Index height() const { return height_; }
  Eigen::Index width() const { return width_; }
  Eigen::Index plane() const { return height_ * width_; }
  Eigen::Index size() const { return data_.size(); }

  Scalar &operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) { return data_(c, y * width_ + x); }
  Scalar operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) const { return data_(c, y * width_ + x); }

  Matrix &matrix() { return data_; }
  Matrix const &matrix() const { return data_; }
  Scalar *data() { return data_.data(); }
  Scalar const *data() const { return data_.data(); }

  auto flat() { return Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(data_.data(), data_.size()); }
  auto flat() const {
    return Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1> const>(data_.data(), data_.size());
  }

  bool same_shape(Tensor3 const &o) const {
    return channels() == o.channels() && height_ == o.height_ && width_ == o.width_;
  }

  bool all_finite() const { return data_.allFinite(); }

private:
  Eigen::Index height_ = 0;
  Eigen::Index width_ = 0;
  Matrix data_;
};

template <typename Scalar>
void require_same_shape(Tensor3<Scalar> const &a, Tensor3<Scalar> const &b, char const *what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": tensor shapes differ (" + std::to_string(a.channels()) + "x" +
                     std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                     std::to_string(b.channels()) + "x" + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

/// Convolution weights (out, in, k, k) without any bias term. Stored as an
/// out x (in*k*k) row-major matrix; column index is (i*k + ky)*k + kx.
template <typename Scalar>
class ConvWeights {
public:
  using Matrix = RowMajorMatrix<Scalar>;

  ConvWeights() = default;
  ConvWeights(Eigen::Index out_channels, Eigen::Index in_channels, Eigen::Index kernel)
      : in_(in_channels), kernel_(kernel) {
    if (kernel < 1 || kernel % 2 == 0) {
      throw ParameterError("conv kernel size must be odd and positive, got " + std::to_string(kernel));
    }
    if (out_channels < 1 || in_channels < 1) throw ParameterError("conv channel counts must be >= 1");
    data_ = Matrix::Zero(out_channels, in_channels * kernel * kernel);
  }

  Eigen::Index out_channels() const { return data_.rows(); }
  Eigen::Index in_channels() const { return in_; }
  Eigen::Index kernel() const { return kernel_; }
  Eigen::Index size() const { return data_.size(); }

  Scalar &operator()(Eigen::Index o, Eigen::Index i, Eigen::Index ky, Eigen::Index kx) {
    return data_(o, (i * kernel_ + ky) * kernel_ + kx);
  }
  Scalar operator()(Eigen::Index o, Eigen::Index i, Eigen::Index ky, Eigen::Index kx) const {
    return data_(o, (i * kernel_ + ky) * kernel_ + kx);
  }

  Matrix &matrix() { return data_; }
  Matrix const &matrix() const { return data_; }
  Scalar *data() { return data_.data(); }
  Scalar const *data() const { return data_.data(); }

  bool same_shape(ConvWeights const &o) const {
    return out_channels() == o.out_channels() && in_ == o.in_ && kernel_ == o.kernel_;
  }

private:
  Eigen::Index in_ = 0;
  Eigen::Index kernel_ = 1;
  Matrix data_;
};

using Tensor3d = Tensor3<double>;
using ConvWeightsd = ConvWeights<double>;

using Complex = std::complex<double>;
/// Complex 2D grid, rows = phase-encode (ky / y), cols = readout (kx / x).
using CxGrid = Eigen::Array<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RealGrid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// One grid per receive coil.
using MultiCoil = std::vector<CxGrid>;

/// Interleave complex coil grids into real channels: channel 2c holds the real
/// part of coil c and channel 2c+1 the imaginary part.
inline Tensor3d to_channels(MultiCoil const &coils, double scale = 1.0) {
  if (coils.empty()) throw ShapeError("to_channels: no coils");
  auto const h = coils[0].rows(), w = coils[0].cols();
  Tensor3d t(2 * static_cast<Eigen::Index>(coils.size()), h, w);
  for (std::size_t c = 0; c < coils.size(); ++c) {
    if (coils[c].rows() != h || coils[c].cols() != w) throw ShapeError("to_channels: coil grids differ in size");
    auto const ci = static_cast<Eigen::Index>(c);
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        t(2 * ci, y, x) = scale * coils[c](y, x).real();
        t(2 * ci + 1, y, x) = scale * coils[c](y, x).imag();
      }
    }
  }
  return t;
}

inline Tensor3d to_channels(CxGrid const &grid, double scale = 1.0) { return to_channels(MultiCoil{grid}, scale); }

inline MultiCoil from_channels(Tensor3d const &t, double scale = 1.0) {
  if (t.channels() % 2 != 0) throw ChannelPairingError("from_channels: odd channel count");
  MultiCoil out(static_cast<std::size_t>(t.channels() / 2), CxGrid(t.height(), t.width()));
  for (Eigen::Index c = 0; c < t.channels() / 2; ++c) {
    auto &g = out[static_cast<std::size_t>(c)];
    for (Eigen::Index y = 0; y < t.height(); ++y) {
      for (Eigen::Index x = 0; x < t.width(); ++x) {
        g(y, x) = Complex(scale * t(2 * c, y, x), scale * t(2 * c + 1, y, x));
      }
    }
  }
  return out;
}

} // namespace raki
