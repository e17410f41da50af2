#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "oracles.hpp"
#include "raki/fft.hpp"
#include "raki/sim.hpp"

using namespace raki;

namespace {

double max_abs(CxGrid const &g) { return g.abs().maxCoeff(); }

double max_abs(MultiCoil const &a, MultiCoil const &b) {
  double m = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) m = std::max(m, max_abs(a[c] - b[c]));
  return m;
}

CxGrid roll_rows(CxGrid const &g, int d) {
  CxGrid out(g.rows(), g.cols());
  for (Eigen::Index y = 0; y < g.rows(); ++y) out((y + d) % g.rows(), Eigen::all) = g.row(y);
  return out;
}

double correlation(RealGrid const &a, RealGrid const &b) {
  double const ma = a.mean(), mb = b.mean();
  return ((a - ma) * (b - mb)).sum() / std::sqrt((a - ma).square().sum() * (b - mb).square().sum());
}

SimConfig small_config() {
  SimConfig c;
  c.height = 16;
  c.width = 16;
  c.coils = 4;
  c.frames = 5;
  return c;
}

} // namespace

TEST(Phantom, DistinctSlicesInRange) {
  Rng rng(1);
  auto const p = make_phantom(32, 32, 2, rng);
  ASSERT_EQ(p.size(), 2u);
  for (auto const &img : p) {
    EXPECT_GE(img.minCoeff(), 0.0);
    EXPECT_LE(img.maxCoeff(), 1.0);
    EXPECT_GT(img.maxCoeff(), 0.0);
  }
  EXPECT_LT(correlation(p[0], p[1]), 0.95);
}

TEST(Phantom, RejectsZeroSlicesAndBadGrid) {
  Rng rng(1);
  EXPECT_THROW(make_phantom(32, 32, 0, rng), ParameterError);
  EXPECT_THROW(make_phantom(24, 32, 1, rng), DimensionError);
}

TEST(Phantom, Deterministic) {
  Rng a(5), b(5);
  auto const pa = make_phantom(32, 32, 3, a), pb = make_phantom(32, 32, 3, b);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_TRUE((pa[s] == pb[s]).all());
}

TEST(Coils, CoverGridAndAreNotProportional) {
  Rng rng(2);
  auto const coils = make_coils(32, 32, 8, rng);
  ASSERT_EQ(coils.size(), 8u);
  RealGrid acc = RealGrid::Zero(32, 32);
  for (auto const &c : coils) {
    EXPECT_LE(c.sensitivity.abs().maxCoeff(), 1.0 + 1e-12);
    acc += c.sensitivity.abs2();
  }
  EXPECT_GT(acc.sqrt().minCoeff(), 0.0);
  for (std::size_t i = 0; i < coils.size(); ++i) {
    for (std::size_t j = i + 1; j < coils.size(); ++j) {
      auto const &a = coils[i].sensitivity;
      auto const &b = coils[j].sensitivity;
      double const ip = std::abs((a.conjugate() * b).sum()) / std::sqrt(a.abs2().sum() * b.abs2().sum());
      EXPECT_LT(ip, 0.999) << i << "," << j;
    }
  }
}

TEST(Coils, RejectsSingleCoilAndIsDeterministic) {
  Rng rng(3);
  EXPECT_THROW(make_coils(32, 32, 1, rng), ParameterError);
  Rng a(9), b(9);
  auto const ca = make_coils(16, 16, 4, a), cb = make_coils(16, 16, 4, b);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(max_abs(ca[c].sensitivity - cb[c].sensitivity), 0.0);
}

TEST(Encode, ZeroImageGivesZeroKspace) {
  Rng rng(4);
  auto const coils = make_coils(16, 16, 3, rng);
  for (auto const &k : encode_slice(RealGrid::Zero(16, 16), coils)) EXPECT_EQ(max_abs(k), 0.0);
}

TEST(Encode, UniformSensitivityIsPlainDft) {
  Rng rng(5);
  RealGrid const img = make_phantom(16, 16, 1, rng)[0];
  std::vector<CoilProfile> const coils{{0, CxGrid::Ones(16, 16)}};
  EXPECT_LT(max_abs(encode_slice(img, coils)[0] - fft2c(img.cast<Complex>())), 1e-14);
}

TEST(Encode, RoundtripRecoversWeightedImage) {
  Rng rng(6);
  RealGrid const img = make_phantom(32, 32, 1, rng)[0];
  auto const coils = make_coils(32, 32, 4, rng);
  auto const back = ifft2c(encode_slice(img, coils));
  for (std::size_t c = 0; c < coils.size(); ++c) EXPECT_LT(max_abs(back[c] - coils[c].sensitivity * img), 1e-10);
  std::vector<CoilProfile> const wrong{{0, CxGrid::Ones(8, 8)}};
  EXPECT_THROW(encode_slice(img, wrong), ShapeError);
}

TEST(Caipi, SliceZeroIsIdentity) {
  Rng rng(7);
  CxGrid const k = oracle::random_grid(rng, 32, 32);
  EXPECT_EQ(max_abs(apply_caipi_shift(k, 0, 1.0 / 3.0) - k), 0.0);
}

TEST(Caipi, HalfFovShiftIsRoll) {
  Rng rng(8);
  CxGrid const img = oracle::random_grid(rng, 32, 32);
  CxGrid const shifted = ifft2c(apply_caipi_shift(fft2c(img), 1, 0.5));
  EXPECT_LT(max_abs(shifted - roll_rows(img, 16)), 1e-10);
}

TEST(Caipi, IntegerShiftsAreRolls) {
  Rng rng(9);
  CxGrid const img = oracle::random_grid(rng, 32, 16);
  for (int d : {1, 5, 8, 31}) EXPECT_LT(max_abs(ifft2c(apply_phase_ramp(fft2c(img), d)) - roll_rows(img, d)), 1e-10);
}

TEST(Caipi, FractionalRampIsInvertible) {
  Rng rng(10);
  CxGrid const k = oracle::random_grid(rng, 32, 32);
  EXPECT_DOUBLE_EQ(caipi_shift_voxels(2, 1.0 / 3.0, 32), 64.0 / 3.0);
  MultiCoil const shifted = apply_caipi_shift(MultiCoil{k}, 2, 1.0 / 3.0);
  EXPECT_LT(max_abs(undo_caipi_shift(shifted, 2, 1.0 / 3.0)[0] - k), 1e-12);
  EXPECT_GT(max_abs(shifted[0] - k), 1e-3);
}

TEST(Alias, SingleSliceAndZeroSlice) {
  Rng rng(11);
  MultiCoil const a{oracle::random_grid(rng, 8, 8), oracle::random_grid(rng, 8, 8)};
  MultiCoil const zero{CxGrid::Zero(8, 8), CxGrid::Zero(8, 8)};
  EXPECT_EQ(max_abs(sms_alias(make_packet({a}, 0.5)), a), 0.0);
  SlicePacket p;
  p.slices = {zero, a};
  EXPECT_EQ(max_abs(sms_alias(p), a), 0.0);
}

TEST(Alias, Linear) {
  Rng rng(12);
  SlicePacket pa, pb, pab;
  for (int s = 0; s < 3; ++s) {
    MultiCoil a{oracle::random_grid(rng, 8, 8)}, b{oracle::random_grid(rng, 8, 8)};
    pab.slices.push_back({a[0] + b[0]});
    pa.slices.push_back(std::move(a));
    pb.slices.push_back(std::move(b));
  }
  MultiCoil const lhs{sms_alias(pa)[0] + sms_alias(pb)[0]};
  // Summation order differs, so equality holds to rounding.
  EXPECT_LT(max_abs(lhs, sms_alias(pab)), 1e-14);
}

TEST(Alias, RejectsInconsistentGrids) {
  SlicePacket p;
  p.slices = {MultiCoil{CxGrid::Zero(8, 8)}, MultiCoil{CxGrid::Zero(4, 8)}};
  EXPECT_THROW(sms_alias(p), ShapeError);
}

TEST(Alias, CommutesWithDft) {
  Rng rng(13);
  auto const phantom = make_phantom(32, 32, 3, rng);
  auto const coils = make_coils(32, 32, 4, rng);
  std::vector<MultiCoil> unshifted;
  for (auto const &img : phantom) unshifted.push_back(encode_slice(img, coils));
  SlicePacket const packet = make_packet(unshifted, 1.0 / 3.0);
  auto const image = ifft2c(sms_alias(packet));
  for (std::size_t c = 0; c < coils.size(); ++c) {
    CxGrid expected = CxGrid::Zero(32, 32);
    for (std::size_t s = 0; s < phantom.size(); ++s) {
      // Slice s moves by s * N / 3 voxels, so apply the exact ramp to its image.
      expected += ifft2c(apply_phase_ramp(fft2c((coils[c].sensitivity * phantom[s]).eval()),
                                          packet.shift_voxels[s]));
    }
    EXPECT_LT(max_abs(image[c] - expected), 1e-10);
  }
  EXPECT_DOUBLE_EQ(packet.shift_voxels[2], 64.0 / 3.0);
}

TEST(Timeseries, NoPerturbationGivesIdenticalFrames) {
  Rng rng(14);
  SlicePacket const packet = simulate(small_config(), 1).series.calibration;
  auto const ts = make_timeseries(packet, 4, 0.0, 0.0, rng);
  ASSERT_EQ(ts.frame_count(), 4);
  for (int f = 1; f < 4; ++f) EXPECT_EQ(max_abs(ts.frames[f], ts.frames[0]), 0.0);
  EXPECT_EQ(max_abs(ts.frames[0], sms_alias(packet)), 0.0);
}

TEST(Timeseries, NoiseStatistics) {
  Rng rng(15);
  SimConfig c = small_config();
  c.height = c.width = 32;
  c.coils = 12;
  SlicePacket const packet = simulate(c, 2).series.calibration;
  double const sigma = 0.05;
  auto const ts = make_timeseries(packet, 2, 0.0, sigma, rng);
  double sq = 0.0;
  long count = 0;
  for (std::size_t k = 0; k < ts.frames[0].size(); ++k) {
    sq += (ts.frames[1][k] - ts.frames[0][k]).abs2().sum();
    count += ts.frames[0][k].size();
  }
  ASSERT_GE(count, 10000);
  EXPECT_NEAR(std::sqrt(sq / count), sigma * std::sqrt(2.0), 0.1 * sigma * std::sqrt(2.0));
}

TEST(Timeseries, FactorsBoundedAndFrameZeroUnperturbed) {
  Dataset const d = simulate(small_config(), 3);
  auto const &ts = d.series;
  for (double f : ts.factors[0]) EXPECT_EQ(f, 1.0);
  for (int f = 1; f < ts.frame_count(); ++f) {
    for (double v : ts.factors[f]) {
      EXPECT_GE(v, 1.0 - ts.amplitude);
      EXPECT_LE(v, 1.0 + ts.amplitude);
    }
  }
  // Calibration is noiseless by default: the truth of frame 0 is the calibration itself.
  EXPECT_EQ(max_abs(ts.truth(0, 1), ts.calibration.slices[1]), 0.0);
}

TEST(Timeseries, RejectsBadArguments) {
  Rng rng(16);
  SlicePacket const packet = simulate(small_config(), 1).series.calibration;
  EXPECT_THROW(make_timeseries(packet, 1, 0.1, 0.0, rng), ParameterError);
  EXPECT_THROW(make_timeseries(packet, 3, 1.0, 0.0, rng), ParameterError);
  EXPECT_THROW(make_timeseries(packet, 3, 0.1, -1.0, rng), ParameterError);
}

TEST(Simulate, DeterministicAndSelfConsistent) {
  Dataset const a = simulate(small_config(), 7), b = simulate(small_config(), 7), c = simulate(small_config(), 8);
  for (int f = 0; f < a.series.frame_count(); ++f) EXPECT_EQ(max_abs(a.series.frames[f], b.series.frames[f]), 0.0);
  EXPECT_GT(max_abs(a.series.frames[0], c.series.frames[0]), 0.0);
  // Noiseless frames are exactly the factor-weighted sum of the calibration slices.
  SimConfig clean = small_config();
  clean.noise_sigma = 0.0;
  Dataset const d = simulate(clean, 7);
  for (int f = 0; f < d.series.frame_count(); ++f) {
    SlicePacket p;
    for (int s = 0; s < d.series.calibration.sms(); ++s) p.slices.push_back(d.series.truth(f, s));
    EXPECT_LT(max_abs(sms_alias(p), d.series.frames[f]), 1e-14);
  }
}

TEST(Simulate, CalibrationNoiseFlag) {
  SimConfig c = small_config();
  Dataset const clean = simulate(c, 4);
  c.calibration_noise = true;
  Dataset const noisy = simulate(c, 4);
  EXPECT_GT(max_abs(noisy.series.calibration.slices[0], clean.series.calibration.slices[0]), 0.0);
}

TEST(Rss, CombinesCoils) {
  MultiCoil const m{CxGrid::Constant(2, 2, Complex(3, 0)), CxGrid::Constant(2, 2, Complex(0, 4))};
  EXPECT_LT((rss(m) - 5.0).abs().maxCoeff(), 1e-15);
}
