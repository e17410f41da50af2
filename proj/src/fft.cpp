#include "raki/fft.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace raki {

bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

void require_pow2(Eigen::Index h, Eigen::Index w) {
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw DimensionError("fft2c: grid " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not a power of two in both dimensions");
  }
}

// In-place radix-2 transform of n contiguous values with the given stride.
// sign = -1 forward, +1 inverse; no scaling.
void fft1d(Complex *v, Eigen::Index n, Eigen::Index stride, int sign) {
  for (Eigen::Index i = 1, j = 0; i < n; ++i) {
    Eigen::Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(v[i * stride], v[j * stride]);
  }
  for (Eigen::Index len = 2; len <= n; len <<= 1) {
    double const ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    for (Eigen::Index start = 0; start < n; start += len) {
      for (Eigen::Index k = 0; k < len / 2; ++k) {
        // Twiddles computed directly rather than by recurrence to keep the
        // roundtrip error near machine precision.
        Complex const wk(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        Complex &a = v[(start + k) * stride];
        Complex &b = v[(start + k + len / 2) * stride];
        Complex const t = wk * b;
        b = a - t;
        a = a + t;
      }
    }
  }
}

CxGrid roll_half(CxGrid const &g) {
  auto const h = g.rows(), w = g.cols();
  CxGrid out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) out((y + h / 2) % h, (x + w / 2) % w) = g(y, x);
  }
  return out;
}

CxGrid transform(CxGrid const &in, int sign) {
  require_pow2(in.rows(), in.cols());
  auto const h = in.rows(), w = in.cols();
  CxGrid g = roll_half(in);
  for (Eigen::Index y = 0; y < h; ++y) fft1d(g.data() + y * w, w, 1, sign);
  for (Eigen::Index x = 0; x < w; ++x) fft1d(g.data() + x, h, w, sign);
  g /= std::sqrt(static_cast<double>(h * w));
  return roll_half(g);
}

Tensor3d transform(Tensor3d const &x, int sign) {
  if (x.channels() % 2 != 0) {
    throw ChannelPairingError("dft2: channel count " + std::to_string(x.channels()) +
                              " is odd; expected interleaved real/imag pairs");
  }
  require_pow2(x.height(), x.width());
  MultiCoil planes = from_channels(x);
  for (auto &p : planes) p = transform(p, sign);
  return to_channels(planes);
}

} // namespace

CxGrid fft2c(CxGrid const &image) { return transform(image, -1); }
CxGrid ifft2c(CxGrid const &kspace) { return transform(kspace, +1); }

MultiCoil fft2c(MultiCoil const &images) {
  MultiCoil out;
  out.reserve(images.size());
  for (auto const &g : images) out.push_back(fft2c(g));
  return out;
}

MultiCoil ifft2c(MultiCoil const &kspace) {
  MultiCoil out;
  out.reserve(kspace.size());
  for (auto const &g : kspace) out.push_back(ifft2c(g));
  return out;
}

Tensor3d dft2_centered(Tensor3d const &x) { return transform(x, -1); }
Tensor3d idft2_centered(Tensor3d const &x) { return transform(x, +1); }

} // namespace raki
