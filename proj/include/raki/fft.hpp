#pragma once

#include "tensor.hpp"

namespace raki {

/// Centered, orthonormal 2D DFT: DC sits at (H/2, W/2) in both domains and
/// each dimension is scaled by 1/sqrt(N), so the transform is unitary.
/// Sizes must be powers of two (iterative radix-2).
CxGrid fft2c(CxGrid const &image);
CxGrid ifft2c(CxGrid const &kspace);

MultiCoil fft2c(MultiCoil const &images);
MultiCoil ifft2c(MultiCoil const &kspace);

/// Channel-pair versions: channels (2c, 2c+1) are the real/imag parts of one
/// complex plane.
Tensor3d dft2_centered(Tensor3d const &x);
Tensor3d idft2_centered(Tensor3d const &x);

bool is_power_of_two(Eigen::Index n);

} // namespace raki
