#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "raki/augment.hpp"
#include "raki/conv.hpp"
#include "raki/network.hpp"
#include "raki/sim.hpp"

using namespace raki;

namespace {

NetworkConfig config(int layers, int filter, int filters, int penultimate, int coils, bool bn = false,
                     bool dropout = false) {
  NetworkConfig c;
  c.num_layers = layers;
  c.filter_size = filter;
  c.num_filters = filters;
  c.penultimate_filters = penultimate;
  c.batch_norm = bn;
  c.dropout = dropout;
  c.in_channels = 2 * coils;
  return c;
}

bool same_shape(LayerShape const &a, LayerShape const &b) {
  return a.in_channels == b.in_channels && a.out_channels == b.out_channels && a.kernel == b.kernel;
}

Dataset small_dataset(std::uint64_t seed, double noise = 0.0) {
  SimConfig c;
  c.height = 16;
  c.width = 16;
  c.coils = 4;
  c.frames = 4;
  c.noise_sigma = noise;
  return simulate(c, seed);
}

double max_weight_diff(RakiNetwork const &a, RakiNetwork const &b) {
  double m = 0.0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    m = std::max(m, (a.layers[l].conv.matrix() - b.layers[l].conv.matrix()).cwiseAbs().maxCoeff());
  }
  return m;
}

} // namespace

TEST(Architecture, FourLayerExample) {
  auto const shapes = layer_shapes(config(4, 9, 64, 128, 32));
  std::vector<LayerShape> const expected{{64, 64, 9}, {64, 64, 9}, {64, 128, 1}, {128, 2, 9}};
  ASSERT_EQ(shapes.size(), expected.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) EXPECT_TRUE(same_shape(shapes[i], expected[i])) << i;
}

TEST(Architecture, DegenerateDepths) {
  auto const one = layer_shapes(config(1, 3, 32, 128, 8));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(same_shape(one[0], {16, 2, 3}));
  auto const two = layer_shapes(config(2, 5, 32, 64, 8));
  ASSERT_EQ(two.size(), 2u);
  EXPECT_TRUE(same_shape(two[0], {16, 64, 1}));
  EXPECT_TRUE(same_shape(two[1], {64, 2, 5}));
}

TEST(Architecture, ParameterCounts) {
  // Hand-computed sums of out * in * k^2.
  EXPECT_EQ(parameter_count(config(4, 9, 64, 128, 32)), 64 * 64 * 81 + 64 * 64 * 81 + 64 * 128 + 128 * 2 * 81);
  EXPECT_EQ(parameter_count(config(3, 5, 32, 128, 8)), 16 * 32 * 25 + 32 * 128 + 128 * 2 * 25);
  EXPECT_EQ(parameter_count(config(1, 3, 32, 128, 4)), 8 * 2 * 9);
  Rng rng(1);
  auto const c = config(3, 5, 32, 128, 8);
  EXPECT_EQ(build_network(c, rng).conv_parameter_count(), parameter_count(c));
}

TEST(Architecture, LayerFlags) {
  Rng rng(2);
  RakiNetwork const net = build_network(config(3, 3, 8, 16, 2, true, true), rng);
  ASSERT_EQ(net.layers.size(), 3u);
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    EXPECT_TRUE(net.layers[l].relu);
    EXPECT_TRUE(net.layers[l].dropout);
    EXPECT_TRUE(net.layers[l].batch_norm.has_value());
  }
  auto const &last = net.layers.back();
  EXPECT_FALSE(last.relu);
  EXPECT_FALSE(last.dropout);
  EXPECT_FALSE(last.batch_norm.has_value());
  EXPECT_EQ(last.conv.out_channels(), 2);
  RakiNetwork const single = build_network(config(1, 3, 8, 16, 2, true, true), rng);
  EXPECT_FALSE(single.layers[0].relu || single.layers[0].dropout || single.layers[0].batch_norm);
}

TEST(Architecture, InitializationBounds) {
  Rng rng(3);
  RakiNetwork const net = build_network(config(3, 5, 32, 64, 4), rng);
  for (auto const &l : net.layers) {
    double const bound = std::sqrt(1.0 / (l.conv.in_channels() * l.conv.kernel() * l.conv.kernel()));
    EXPECT_LE(l.conv.matrix().cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(l.conv.matrix().cwiseAbs().maxCoeff(), 0.5 * bound);
  }
}

TEST(Architecture, InvalidConfigs) {
  Rng rng(4);
  EXPECT_THROW(build_network(config(0, 3, 8, 8, 2), rng), ConfigError);
  EXPECT_THROW(build_network(config(3, 4, 8, 8, 2), rng), ConfigError);
  EXPECT_THROW(build_network(config(3, 3, 0, 8, 2), rng), ConfigError);
  EXPECT_THROW(build_network(config(3, 3, 8, 0, 2), rng), ConfigError);
  // The penultimate count is irrelevant without a penultimate layer.
  EXPECT_NO_THROW(build_network(config(1, 3, 8, 0, 2), rng));
}

TEST(Forward, ZeroInputGivesZeroOutput) {
  Rng rng(5);
  RakiNetwork net = build_network(config(3, 3, 8, 16, 2, true, true), rng);
  Tensor3d const zero(4, 8, 8);
  EXPECT_EQ(infer(net, zero).flat().cwiseAbs().maxCoeff(), 0.0);
  auto const out = forward(net, {zero, zero}, Mode::Train, rng);
  EXPECT_EQ(out[1].flat().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, SingleLayerIsOneConvolution) {
  Rng rng(6);
  RakiNetwork net = build_network(config(1, 5, 8, 16, 3), rng);
  Tensor3d const x = oracle::random_tensor(rng, 6, 8, 8);
  EXPECT_EQ(infer(net, x).flat(), conv2d_forward(x, net.layers[0].conv).flat());
  EXPECT_EQ(forward(net, {x}, Mode::Train, rng)[0].flat(), conv2d_forward(x, net.layers[0].conv).flat());
}

TEST(Forward, InferenceIsDeterministic) {
  Rng rng(7);
  RakiNetwork const net = build_network(config(3, 3, 8, 16, 2, true, true), rng);
  Tensor3d const x = oracle::random_tensor(rng, 4, 8, 8);
  EXPECT_EQ(infer(net, x).flat(), infer(net, x).flat());
  EXPECT_THROW(infer(net, Tensor3d(6, 8, 8)), ShapeError);
}

TEST(Forward, InferModeMatchesBatchedInfer) {
  Rng rng(8);
  RakiNetwork net = build_network(config(3, 3, 8, 16, 2, true, true), rng);
  Tensor3d const x = oracle::random_tensor(rng, 4, 8, 8);
  forward(net, {x, x}, Mode::Train, rng);
  EXPECT_LT((forward(net, {x}, Mode::Infer, rng)[0].flat() - infer(net, x).flat()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (bool bn : {false, true}) {
    for (bool dropout : {false, true}) {
      Rng init(9);
      RakiNetwork net = build_network(config(3, 3, 4, 5, 1, bn, dropout), init);
      std::vector<Tensor3d> const batch{oracle::random_tensor(init, 2, 5, 5), oracle::random_tensor(init, 2, 5, 5)};
      std::vector<Tensor3d> const weights{oracle::random_tensor(init, 2, 5, 5), oracle::random_tensor(init, 2, 5, 5)};
      auto const f = [&] {
        RakiNetwork copy = net;
        Rng rng(99);
        auto const y = forward(copy, batch, Mode::Train, rng);
        return y[0].flat().dot(weights[0].flat()) + y[1].flat().dot(weights[1].flat());
      };
      RakiNetwork copy = net;
      Rng rng(99);
      ForwardCache cache;
      forward(copy, batch, Mode::Train, rng, &cache);
      auto const g = backward(net, cache, weights);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto &w = net.layers[l].conv;
        double const err = oracle::relative_error(oracle::flat(g.conv[l]), oracle::numeric_gradient(w.data(), w.size(), f));
        EXPECT_LT(err, bn ? 1e-3 : 1e-4) << "layer " << l << " bn " << bn << " dropout " << dropout;
        if (net.layers[l].batch_norm) {
          auto &s = *net.layers[l].batch_norm;
          EXPECT_LT(oracle::relative_error(g.gamma[l], oracle::numeric_gradient(s.gamma.data(), s.gamma.size(), f)), 1e-3);
          EXPECT_LT(oracle::relative_error(g.beta[l], oracle::numeric_gradient(s.beta.data(), s.beta.size(), f)), 1e-3);
        }
      }
    }
  }
}

TEST(Train, BudgetValidationAndSingleStep) {
  Dataset const d = small_dataset(1);
  TrainingSet const set = build_standard_set(d.series.calibration, d.series.frames[0], 0, 0);
  Rng rng(10);
  RakiNetwork net = build_network(config(2, 3, 8, 8, 4), rng);
  TrainOptions options;
  options.adam.learning_rate = 1e-3;
  EXPECT_THROW(train(net, set, {0, 0.0}, options, rng), ParameterError);
  EXPECT_THROW(train(net, TrainingSet{}, {1, 0.0}, options, rng), DataError);

  RakiNetwork const before = net;
  TrainRecord const r = train(net, set, {1, 0.0}, options, rng);
  EXPECT_EQ(r.epochs, 1);
  EXPECT_EQ(r.history.size(), 1u);
  EXPECT_TRUE(r.finite);
  EXPECT_EQ(net.scale, set.scale);
  // One Adam step moves every weight by at most the learning rate, and most by almost exactly that.
  double const moved = max_weight_diff(net, before);
  EXPECT_LE(moved, 1e-3 * (1 + 1e-9));
  EXPECT_GT(moved, 0.99e-3);
}

TEST(Train, SplitSliceBatchesCoverEverySample) {
  Dataset const d = small_dataset(2);
  TrainingSet const set = build_split_slice_set(d.series.calibration, 1, 2);
  Rng rng(11);
  RakiNetwork net = build_network(config(1, 3, 8, 8, 4), rng);
  TrainOptions options;
  options.batch_size = 3;
  options.adam.learning_rate = 1e-3;
  RakiNetwork const before = net;
  // 4 samples in batches of 3 -> two optimizer steps, so some weight moves
  // further than a single step (at most lr) can take it.
  train(net, set, {1, 0.0}, options, rng);
  EXPECT_GT(max_weight_diff(net, before), 1.01e-3);
  RakiNetwork whole = before;
  options.batch_size = 48;
  train(whole, set, {1, 0.0}, options, rng);
  EXPECT_LE(max_weight_diff(whole, before), 1e-3 * (1 + 1e-9));
}

TEST(Train, DeterministicForSeed) {
  Dataset const d = small_dataset(3, 0.01);
  TrainingSet const set = build_split_slice_set(d.series.calibration, 0, 1);
  auto run = [&] {
    Rng rng(12);
    RakiNetwork net = build_network(config(3, 3, 8, 16, 4, true, true), rng);
    TrainOptions options;
    options.batch_size = 2;
    auto const r = train(net, set, {5, 0.0}, options, rng);
    return std::pair{net, r};
  };
  auto const [a, ra] = run();
  auto const [b, rb] = run();
  EXPECT_EQ(max_weight_diff(a, b), 0.0);
  EXPECT_EQ(ra.history, rb.history);
}

TEST(Train, LossDecreases) {
  Dataset const d = small_dataset(4, 0.01);
  TrainingSet const set = build_split_slice_set(d.series.calibration, 0, 0);
  Rng rng(13);
  RakiNetwork net = build_network(config(3, 3, 16, 32, 4, true), rng);
  TrainOptions options;
  options.adam.learning_rate = 1e-3;
  TrainRecord const r = train(net, set, {40, 0.0}, options, rng);
  ASSERT_EQ(r.history.size(), 40u);
  for (double v : r.history) EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(r.final_loss, r.history.front());
  EXPECT_LT(r.final_loss, 0.5 * r.history.front());
}

TEST(Train, WallClockBudgetStopsAtEpochBoundary) {
  Dataset const d = small_dataset(5);
  TrainingSet const set = build_standard_set(d.series.calibration, d.series.frames[0], 0, 0);
  Rng rng(14);
  RakiNetwork net = build_network(config(1, 3, 8, 8, 4), rng);
  TrainRecord const r = train(net, set, {0, 0.05}, TrainOptions{}, rng);
  EXPECT_GE(r.epochs, 1);
  EXPECT_EQ(r.history.size(), static_cast<std::size_t>(r.epochs));
  EXPECT_GE(r.wall_seconds, 0.05);
}

namespace {

// Single-layer 1x1 network copying coil `coil` of the input.
RakiNetwork passthrough(int coils, int coil, double scale) {
  Rng rng(0);
  RakiNetwork net = build_network(config(1, 1, 1, 1, coils), rng);
  net.layers[0].conv.matrix().setZero();
  net.layers[0].conv(0, 2 * coil, 0, 0) = 1.0;
  net.layers[0].conv(1, 2 * coil + 1, 0, 0) = 1.0;
  net.scale = scale;
  return net;
}

} // namespace

TEST(Unalias, IdentityNetsPassSingleSliceThrough) {
  Rng rng(15);
  MultiCoil const frame{oracle::random_grid(rng, 8, 8), oracle::random_grid(rng, 8, 8), oracle::random_grid(rng, 8, 8)};
  RakiBank bank(1, 3, 1.0);
  for (int c = 0; c < 3; ++c) bank.insert(0, c, passthrough(3, c, 0.37));
  auto const out = unalias(bank, frame);
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].size(), 3u);
  for (int c = 0; c < 3; ++c) EXPECT_LT((out[0][c] - frame[c]).abs().maxCoeff(), 1e-14);
}

TEST(Unalias, ShapeContractAndUnshift) {
  Rng rng(16);
  MultiCoil const frame{oracle::random_grid(rng, 8, 8), oracle::random_grid(rng, 8, 8)};
  RakiBank bank(2, 2, 0.5);
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < 2; ++c) bank.insert(s, c, passthrough(2, c, 1.0));
  }
  auto const shifted = unalias_shifted(bank, frame);
  auto const out = unalias(bank, frame);
  ASSERT_EQ(out.size(), 2u);
  for (int s = 0; s < 2; ++s) {
    ASSERT_EQ(out[s].size(), 2u);
    auto const expect = undo_caipi_shift(shifted[s], s, 0.5);
    for (int c = 0; c < 2; ++c) EXPECT_LT((out[s][c] - expect[c]).abs().maxCoeff(), 1e-14);
  }
}

TEST(Unalias, MissingNetworkIsCoverageError) {
  RakiBank bank(2, 2, 0.5);
  bank.insert(0, 0, passthrough(2, 0, 1.0));
  bank.insert(0, 1, passthrough(2, 1, 1.0));
  bank.insert(1, 0, passthrough(2, 0, 1.0));
  MultiCoil const frame{CxGrid::Ones(4, 4), CxGrid::Ones(4, 4)};
  EXPECT_THROW(unalias(bank, frame), CoverageError);
  EXPECT_THROW(bank.insert(2, 0, passthrough(2, 0, 1.0)), IndexError);
}

TEST(Unalias, LinearForSingleLayerNetworks) {
  Rng rng(17);
  Dataset const d = small_dataset(6);
  RakiBank bank(2, 4, 0.5);
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < 4; ++c) {
      RakiNetwork net = build_network(config(1, 3, 8, 8, 4), rng);
      net.scale = 0.5 + s + c;
      bank.insert(s, c, std::move(net));
    }
  }
  MultiCoil const &x = d.series.frames[1];
  MultiCoil scaled = x, summed = x;
  for (std::size_t c = 0; c < x.size(); ++c) {
    scaled[c] *= 2.5;
    summed[c] += d.series.frames[2][c];
  }
  auto const base = unalias(bank, x), up = unalias(bank, scaled), second = unalias(bank, d.series.frames[2]),
             sum = unalias(bank, summed);
  for (int s = 0; s < 2; ++s) {
    for (int c = 0; c < 4; ++c) {
      double const peak = base[s][c].abs().maxCoeff();
      EXPECT_LT((up[s][c] - 2.5 * base[s][c]).abs().maxCoeff(), 1e-12 * peak);
      EXPECT_LT((sum[s][c] - base[s][c] - second[s][c]).abs().maxCoeff(), 1e-12 * peak);
    }
  }
}
