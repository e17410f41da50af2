#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sim.hpp"
#include "tensor.hpp"

namespace raki {

/// Linear k-space kernel mapping multi-coil input to one slice/coil.
/// Weight index is (coil * k + ky) * k + kx, applied as a cross-correlation
/// with the same orientation as conv2d_forward.
struct GrappaKernel {
  int target_slice = 0;
  int target_coil = 0;
  int coils = 0;
  int kernel = 1;
  double lambda = 0.0;
  Eigen::VectorXcd weights;

  Complex operator()(int coil, int ky, int kx) const { return weights((coil * kernel + ky) * kernel + kx); }
  Complex &operator()(int coil, int ky, int kx) { return weights((coil * kernel + ky) * kernel + kx); }
};

/// One least-squares block: every valid interior point of input predicts the
/// matching point of target. A null target means the block's target is zero.
struct FitBlock {
  MultiCoil const *input;
  CxGrid const *target;
};

/// Ridge solution of the stacked blocks via the normal equations
/// (A^H A + lambda I) w = A^H b. lambda unset selects 1e-6 * trace(A^H A) / n.
GrappaKernel fit_grappa_blocks(std::vector<FitBlock> const &blocks, int kernel, std::optional<double> lambda);

/// Slice-GRAPPA: one aliased multi-coil input against one target.
GrappaKernel fit_slice_grappa(MultiCoil const &aliased, CxGrid const &target, int kernel,
                              std::optional<double> lambda = std::nullopt);

/// Split-slice GRAPPA: one block per single slice, with zero targets for the
/// slices other than target_slice.
GrappaKernel fit_split_slice_grappa(SlicePacket const &calibration, int target_slice, int target_coil, int kernel,
                                    std::optional<double> lambda = std::nullopt);

/// Complex convolution of the frame with the kernel, zero padding k/2.
CxGrid apply_kernel(GrappaKernel const &kernel, MultiCoil const &frame);

/// The same operator expressed on interleaved real/imag channels.
ConvWeightsd to_conv_weights(GrappaKernel const &kernel);

/// Solve (H + lambda I) w = rhs for Hermitian positive semi-definite H with a
/// column-oriented Cholesky factorization. Throws NumericalError when the
/// regularized matrix is not positive definite.
Eigen::VectorXcd solve_ridge_normal(Eigen::MatrixXcd const &normal, Eigen::VectorXcd const &rhs, double lambda);

class GrappaBank {
public:
  GrappaBank(int sms, int coils, double fov_shift) : sms_(sms), coils_(coils), fov_shift_(fov_shift) {}

  void insert(GrappaKernel k);
  GrappaKernel const &at(int slice, int coil) const;

  int sms() const { return sms_; }
  int coils() const { return coils_; }
  double fov_shift() const { return fov_shift_; }
  std::map<std::pair<int, int>, GrappaKernel> const &kernels() const { return kernels_; }

private:
  int sms_;
  int coils_;
  double fov_shift_;
  std::map<std::pair<int, int>, GrappaKernel> kernels_;
};

enum class GrappaKind { SliceGrappa, SplitSlice };

/// Fit every (slice, coil) kernel for a dataset. Slice-GRAPPA uses the
/// noiseless full sum of the calibration slices as its aliased input.
GrappaBank fit_grappa_bank(SlicePacket const &calibration, GrappaKind kind, int kernel,
                           std::optional<double> lambda = std::nullopt);

std::vector<MultiCoil> unalias_shifted(GrappaBank const &bank, MultiCoil const &aliased_frame);
std::vector<MultiCoil> unalias(GrappaBank const &bank, MultiCoil const &aliased_frame);

} // namespace raki
