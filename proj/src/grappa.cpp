#include "raki/grappa.hpp"

#include <cmath>
#include <string>

namespace raki {

namespace {

void require_kernel(int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ParameterError("GRAPPA kernel size must be odd, got " + std::to_string(kernel));
}

} // namespace

Eigen::VectorXcd solve_ridge_normal(Eigen::MatrixXcd const &normal, Eigen::VectorXcd const &rhs, double lambda) {
  auto const n = normal.rows();
  if (normal.cols() != n || rhs.size() != n) throw ShapeError("solve_ridge_normal: inconsistent system size");
  if (lambda < 0.0) throw ParameterError("solve_ridge_normal: lambda must be >= 0");

  // Lower-triangular L with L L^H = normal + lambda I.
  Eigen::MatrixXcd L = Eigen::MatrixXcd::Zero(n, n);
  double const scale = normal.diagonal().real().cwiseAbs().maxCoeff();
  double const tiny = 1e-13 * (scale > 0.0 ? scale : 1.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = normal(j, j).real() + lambda;
    for (Eigen::Index p = 0; p < j; ++p) d -= std::norm(L(j, p));
    if (!(d > tiny)) {
      throw NumericalError(lambda == 0.0 ? "GRAPPA normal matrix is singular; use lambda > 0"
                                         : "GRAPPA normal matrix is not positive definite");
    }
    double const ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      Complex s = normal(i, j);
      for (Eigen::Index p = 0; p < j; ++p) s -= L(i, p) * std::conj(L(j, p));
      L(i, j) = s / ljj;
    }
  }
  // Forward then backward substitution.
  Eigen::VectorXcd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Complex s = rhs(i);
    for (Eigen::Index p = 0; p < i; ++p) s -= L(i, p) * y(p);
    y(i) = s / L(i, i);
  }
  Eigen::VectorXcd w(n);
  for (Eigen::Index i = n; i-- > 0;) {
    Complex s = y(i);
    for (Eigen::Index p = i + 1; p < n; ++p) s -= std::conj(L(p, i)) * w(p);
    w(i) = s / L(i, i).real();
  }
  return w;
}

GrappaKernel fit_grappa_blocks(std::vector<FitBlock> const &blocks, int kernel, std::optional<double> lambda) {
  require_kernel(kernel);
  if (blocks.empty()) throw DataError("GRAPPA fit: no blocks");
  auto const &first = *blocks.front().input;
  if (first.empty()) throw ShapeError("GRAPPA fit: input has no coils");
  auto const coils = static_cast<Eigen::Index>(first.size());
  auto const h = first[0].rows(), w = first[0].cols();
  Eigen::Index const r = kernel / 2;
  if (h <= 2 * r || w <= 2 * r) throw ShapeError("GRAPPA fit: grid smaller than the kernel");

  Eigen::Index const unknowns = coils * kernel * kernel;
  Eigen::Index const per_block = (h - 2 * r) * (w - 2 * r);
  Eigen::MatrixXcd A(per_block * static_cast<Eigen::Index>(blocks.size()), unknowns);
  Eigen::VectorXcd b = Eigen::VectorXcd::Zero(A.rows());

  Eigen::Index row = 0;
  for (auto const &blk : blocks) {
    auto const &in = *blk.input;
    if (static_cast<Eigen::Index>(in.size()) != coils) throw ShapeError("GRAPPA fit: blocks differ in coil count");
    for (auto const &g : in) {
      if (g.rows() != h || g.cols() != w) throw ShapeError("GRAPPA fit: input grids differ");
    }
    if (blk.target && (blk.target->rows() != h || blk.target->cols() != w)) {
      throw ShapeError("GRAPPA fit: target grid does not match input");
    }
    for (Eigen::Index y = r; y < h - r; ++y) {
      for (Eigen::Index x = r; x < w - r; ++x, ++row) {
        for (Eigen::Index c = 0; c < coils; ++c) {
          for (Eigen::Index ky = 0; ky < kernel; ++ky) {
            for (Eigen::Index kx = 0; kx < kernel; ++kx) {
              A(row, (c * kernel + ky) * kernel + kx) = in[static_cast<std::size_t>(c)](y + ky - r, x + kx - r);
            }
          }
        }
        if (blk.target) b(row) = (*blk.target)(y, x);
      }
    }
  }

  Eigen::MatrixXcd const normal = A.adjoint() * A;
  Eigen::VectorXcd const rhs = A.adjoint() * b;
  double const lam = lambda ? *lambda : 1e-6 * normal.trace().real() / static_cast<double>(unknowns);

  GrappaKernel k;
  k.coils = static_cast<int>(coils);
  k.kernel = kernel;
  k.lambda = lam;
  k.weights = solve_ridge_normal(normal, rhs, lam);
  if (!k.weights.allFinite()) throw NumericalError("GRAPPA fit produced non-finite weights");
  return k;
}

GrappaKernel fit_slice_grappa(MultiCoil const &aliased, CxGrid const &target, int kernel,
                              std::optional<double> lambda) {
  return fit_grappa_blocks({{&aliased, &target}}, kernel, lambda);
}

GrappaKernel fit_split_slice_grappa(SlicePacket const &calibration, int target_slice, int target_coil, int kernel,
                                    std::optional<double> lambda) {
  if (target_slice < 0 || target_slice >= calibration.sms()) throw IndexError("split-slice GRAPPA: target slice out of range");
  if (target_coil < 0 || target_coil >= calibration.coils()) throw IndexError("split-slice GRAPPA: target coil out of range");
  auto const &target = calibration.slices[static_cast<std::size_t>(target_slice)][static_cast<std::size_t>(target_coil)];
  std::vector<FitBlock> blocks;
  for (int s = 0; s < calibration.sms(); ++s) {
    blocks.push_back({&calibration.slices[static_cast<std::size_t>(s)], s == target_slice ? &target : nullptr});
  }
  auto k = fit_grappa_blocks(blocks, kernel, lambda);
  k.target_slice = target_slice;
  k.target_coil = target_coil;
  return k;
}

CxGrid apply_kernel(GrappaKernel const &kernel, MultiCoil const &frame) {
  if (static_cast<int>(frame.size()) != kernel.coils) throw ShapeError("apply_kernel: frame coil count does not match kernel");
  auto const h = frame.at(0).rows(), w = frame.at(0).cols();
  int const k = kernel.kernel, r = k / 2;
  CxGrid out = CxGrid::Zero(h, w);
  for (int c = 0; c < kernel.coils; ++c) {
    auto const &in = frame[static_cast<std::size_t>(c)];
    if (in.rows() != h || in.cols() != w) throw ShapeError("apply_kernel: coil grids differ");
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Complex const wt = kernel(c, ky, kx);
        int const dy = ky - r, dx = kx - r;
        for (Eigen::Index y = std::max(0, -dy); y < std::min<Eigen::Index>(h, h - dy); ++y) {
          for (Eigen::Index x = std::max(0, -dx); x < std::min<Eigen::Index>(w, w - dx); ++x) {
            out(y, x) += wt * in(y + dy, x + dx);
          }
        }
      }
    }
  }
  return out;
}

ConvWeightsd to_conv_weights(GrappaKernel const &kernel) {
  ConvWeightsd w(2, 2 * kernel.coils, kernel.kernel);
  for (int c = 0; c < kernel.coils; ++c) {
    for (int ky = 0; ky < kernel.kernel; ++ky) {
      for (int kx = 0; kx < kernel.kernel; ++kx) {
        Complex const z = kernel(c, ky, kx);
        // (a + ib)(u + iv) = (au - bv) + i(bu + av)
        w(0, 2 * c, ky, kx) = z.real();
        w(0, 2 * c + 1, ky, kx) = -z.imag();
        w(1, 2 * c, ky, kx) = z.imag();
        w(1, 2 * c + 1, ky, kx) = z.real();
      }
    }
  }
  return w;
}

void GrappaBank::insert(GrappaKernel k) {
  if (k.target_slice < 0 || k.target_slice >= sms_ || k.target_coil < 0 || k.target_coil >= coils_) {
    throw IndexError("GrappaBank: kernel target outside the packet");
  }
  auto key = std::make_pair(k.target_slice, k.target_coil);
  kernels_.insert_or_assign(key, std::move(k));
}

GrappaKernel const &GrappaBank::at(int slice, int coil) const {
  auto it = kernels_.find({slice, coil});
  if (it == kernels_.end()) {
    throw CoverageError("no GRAPPA kernel for slice " + std::to_string(slice) + ", coil " + std::to_string(coil));
  }
  return it->second;
}

GrappaBank fit_grappa_bank(SlicePacket const &calibration, GrappaKind kind, int kernel, std::optional<double> lambda) {
  GrappaBank bank(calibration.sms(), calibration.coils(), calibration.fov_shift);
  MultiCoil const full = sms_alias(calibration);
  for (int s = 0; s < calibration.sms(); ++s) {
    for (int c = 0; c < calibration.coils(); ++c) {
      GrappaKernel k;
      if (kind == GrappaKind::SplitSlice) {
        k = fit_split_slice_grappa(calibration, s, c, kernel, lambda);
      } else {
        k = fit_slice_grappa(full, calibration.slices[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)], kernel,
                             lambda);
        k.target_slice = s;
        k.target_coil = c;
      }
      bank.insert(std::move(k));
    }
  }
  return bank;
}

std::vector<MultiCoil> unalias_shifted(GrappaBank const &bank, MultiCoil const &aliased_frame) {
  std::vector<MultiCoil> out(static_cast<std::size_t>(bank.sms()));
  for (int s = 0; s < bank.sms(); ++s) {
    for (int c = 0; c < bank.coils(); ++c) out[static_cast<std::size_t>(s)].push_back(apply_kernel(bank.at(s, c), aliased_frame));
  }
  return out;
}

std::vector<MultiCoil> unalias(GrappaBank const &bank, MultiCoil const &aliased_frame) {
  auto out = unalias_shifted(bank, aliased_frame);
  for (int s = 0; s < bank.sms(); ++s) out[static_cast<std::size_t>(s)] = undo_caipi_shift(out[static_cast<std::size_t>(s)], s, bank.fov_shift());
  return out;
}

} // namespace raki
