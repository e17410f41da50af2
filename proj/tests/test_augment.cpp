#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "raki/augment.hpp"
#include "raki/sim.hpp"

using namespace raki;

namespace {

SlicePacket random_packet(int n, int coils, std::uint64_t seed, Eigen::Index size = 8) {
  Rng rng(seed);
  std::vector<MultiCoil> slices;
  for (int s = 0; s < n; ++s) {
    MultiCoil m;
    for (int c = 0; c < coils; ++c) m.push_back(oracle::random_grid(rng, size, size));
    slices.push_back(std::move(m));
  }
  return make_packet(slices, 1.0 / n);
}

double max_diff(Tensor3d const &a, Tensor3d const &b) { return (a.flat() - b.flat()).cwiseAbs().maxCoeff(); }

bool is_zero(Tensor3d const &t) { return t.flat().cwiseAbs().maxCoeff() == 0.0; }

} // namespace

TEST(Subsets, Enumeration) {
  EXPECT_EQ(enumerate_subsets(1), (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(enumerate_subsets(3).size(), 8u);
  auto const m8 = enumerate_subsets(8);
  ASSERT_EQ(m8.size(), 256u);
  for (std::uint32_t i = 0; i < 256; ++i) EXPECT_EQ(m8[i], i);
  EXPECT_THROW(enumerate_subsets(0), ParameterError);
  EXPECT_THROW(enumerate_subsets(17), ParameterError);
}

TEST(SplitSlice, SizesZeroTargetsAndDecomposition) {
  for (int n = 1; n <= 8; ++n) {
    SlicePacket const p = random_packet(n, 2, 100 + n, 4);
    int const target = n - 1;
    TrainingSet const set = build_split_slice_set(p, target, 1);
    ASSERT_EQ(set.samples.size(), std::size_t{1} << n);
    EXPECT_EQ(set.provenance, Provenance::SplitSlice);
    std::uint32_t const full = (1u << n) - 1u;
    int zero_targets = 0;
    for (auto const &s : set.samples) {
      EXPECT_EQ(s.input.channels(), 4);
      EXPECT_EQ(s.target.channels(), 2);
      bool const included = (s.mask >> target) & 1u;
      if (!included) {
        EXPECT_TRUE(is_zero(s.target));
        ++zero_targets;
      }
      Tensor3d sum = s.input;
      sum.matrix() += set.samples[full ^ s.mask].input.matrix();
      // Summation order differs between subsets, so random data agrees to rounding.
      EXPECT_LT(max_diff(sum, set.samples[full].input), 1e-14) << "n " << n << " mask " << s.mask;
    }
    EXPECT_EQ(zero_targets, 1 << (n - 1));
  }
}

TEST(SplitSlice, DecompositionIsExactOnDyadicData) {
  // Dyadic values with a unit peak add and scale without rounding, so the
  // identity is bit-exact.
  SlicePacket p;
  p.fov_shift = 0.5;
  double const weight[3] = {0.25, 0.25, 0.5};
  for (int s = 0; s < 3; ++s) {
    p.slices.push_back({CxGrid::Constant(4, 4, Complex(weight[s], 0.0)),
                        CxGrid::Constant(4, 4, Complex(0.5 * weight[s], -0.25 * weight[s]))});
  }
  TrainingSet const set = build_split_slice_set(p, 0, 0);
  ASSERT_EQ(set.scale, 1.0);
  for (auto const &s : set.samples) {
    Tensor3d sum = s.input;
    sum.matrix() += set.samples[7u ^ s.mask].input.matrix();
    EXPECT_EQ(sum.flat(), set.samples[7].input.flat());
  }
}

TEST(SplitSlice, FullAndSingletonMasks) {
  SlicePacket const p = random_packet(3, 3, 7);
  TrainingSet const set = build_split_slice_set(p, 1, 2);
  EXPECT_GT(set.scale, 0.0);
  Tensor3d const alias = to_channels(sms_alias(p), set.scale);
  EXPECT_EQ(set.samples[7].input.flat(), alias.flat());
  EXPECT_EQ(set.samples[7].target.flat(), to_channels(p.slices[1][2], set.scale).flat());
  EXPECT_EQ(set.samples[0b010].input.flat(), to_channels(p.slices[1], set.scale).flat());
  EXPECT_EQ(set.samples[0b010].target.flat(), to_channels(p.slices[1][2], set.scale).flat());
  EXPECT_TRUE(is_zero(set.samples[0b101].target));
  EXPECT_TRUE(is_zero(set.samples[0].input));
  // The global scale normalizes the full-mask input to unit peak magnitude.
  double peak = 0.0;
  for (auto const &g : from_channels(set.samples[7].input)) peak = std::max(peak, g.abs().maxCoeff());
  EXPECT_NEAR(peak, 1.0, 1e-12);
}

TEST(SplitSlice, RejectsBadTargets) {
  SlicePacket const p = random_packet(2, 2, 8);
  EXPECT_THROW(build_split_slice_set(p, 2, 0), IndexError);
  EXPECT_THROW(build_split_slice_set(p, 0, -1), IndexError);
  EXPECT_THROW(build_standard_set(p, sms_alias(p), 0, 2), IndexError);
}

TEST(Standard, NoiselessMatchesFullMask) {
  SlicePacket const p = random_packet(2, 3, 9);
  TrainingSet const split = build_split_slice_set(p, 0, 1);
  TrainingSet const standard = build_standard_set(p, sms_alias(p), 0, 1);
  ASSERT_EQ(standard.samples.size(), 1u);
  EXPECT_EQ(standard.provenance, Provenance::Standard);
  EXPECT_EQ(standard.samples[0].mask, 3u);
  EXPECT_EQ(standard.scale, split.scale);
  EXPECT_EQ(standard.samples[0].input.flat(), split.samples[3].input.flat());
  EXPECT_EQ(standard.samples[0].target.flat(), split.samples[3].target.flat());
}

TEST(Standard, NoisyFrameDiffersByNoiseOnly) {
  SimConfig c;
  c.height = c.width = 32;
  c.noise_sigma = 0.02;
  Dataset const d = simulate(c, 5);
  auto const &cal = d.series.calibration;
  TrainingSet const standard = build_standard_set(cal, d.series.frames[0], 1, 3);
  MultiCoil const input = from_channels(standard.samples[0].input, 1.0 / standard.scale);
  MultiCoil const clean = sms_alias(cal);
  double sq = 0.0;
  long count = 0;
  for (std::size_t k = 0; k < clean.size(); ++k) {
    CxGrid const noise = input[k] - clean[k];
    EXPECT_LT((noise - (d.series.frames[0][k] - clean[k])).abs().maxCoeff(), 1e-12);
    sq += noise.abs2().sum();
    count += noise.size();
  }
  EXPECT_NEAR(std::sqrt(sq / count), c.noise_sigma, 0.1 * c.noise_sigma);
  EXPECT_THROW(build_standard_set(cal, MultiCoil{CxGrid::Zero(32, 32)}, 0, 0), ShapeError);
}

TEST(Normalization, RejectsAllZeroInput) {
  EXPECT_THROW(normalization_scale(MultiCoil{CxGrid::Zero(4, 4)}), DataError);
  EXPECT_DOUBLE_EQ(normalization_scale(MultiCoil{CxGrid::Constant(2, 2, Complex(3, 4))}), 0.2);
}
