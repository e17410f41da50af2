#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adam.hpp"
#include "augment.hpp"
#include "layers.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace raki {

struct NetworkConfig {
  int num_layers = 3;
  int filter_size = 5;
  int num_filters = 32;
  /// Outputs of the 1x1 penultimate layer; ignored when num_layers == 1.
  int penultimate_filters = 128;
  bool batch_norm = true;
  bool dropout = false;
  double dropout_rate = 0.5;
  int in_channels = 16;
  int out_channels = 2;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  bool has_penultimate() const { return num_layers >= 2; }
};

struct LayerShape {
  int in_channels;
  int out_channels;
  int kernel;
};

/// Layer shapes implied by a config, first to last.
std::vector<LayerShape> layer_shapes(NetworkConfig const &config);
Eigen::Index parameter_count(NetworkConfig const &config);

struct Layer {
  ConvWeightsd conv;
  std::optional<BatchNormState<double>> batch_norm;
  bool relu = false;
  bool dropout = false;
};

struct RakiNetwork {
  NetworkConfig config;
  std::vector<Layer> layers;
  /// Input/target scale of the training set this network was fitted on.
  double scale = 1.0;

  Eigen::Index conv_parameter_count() const;
};

/// Fan-in scaled uniform initialization, bounds +-sqrt(1 / (in * k^2)).
RakiNetwork build_network(NetworkConfig const &config, Rng &rng);

struct LayerCache {
  std::vector<Tensor3d> input;
  std::vector<Tensor3d> pre_activation;
  BatchNormCache<double> batch_norm;
  std::vector<Tensor3d> dropout_mask;
};

using ForwardCache = std::vector<LayerCache>;

/// Batched forward pass: conv -> batch norm -> ReLU -> dropout for every
/// layer except the last, which is a bare convolution. Train mode updates
/// batch-norm running statistics and draws dropout masks from rng.
std::vector<Tensor3d> forward(RakiNetwork &net, std::vector<Tensor3d> const &batch, Mode mode, Rng &rng,
                              ForwardCache *cache = nullptr);

/// Deterministic inference (running statistics, no dropout).
Tensor3d infer(RakiNetwork const &net, Tensor3d const &input);

struct NetworkGrads {
  std::vector<ConvWeightsd> conv;
  std::vector<Eigen::VectorXd> gamma;
  std::vector<Eigen::VectorXd> beta;
};

/// Backward pass through a cached train-mode forward.
NetworkGrads backward(RakiNetwork const &net, ForwardCache const &cache, std::vector<Tensor3d> const &grad_out);

/// Parameter/gradient views in a fixed order, for the optimizer.
std::vector<ParamView> param_views(RakiNetwork &net, NetworkGrads const &grads);

struct TrainBudget {
  /// 0 = unlimited, but at least one of the two limits must be set.
  int max_epochs = 200;
  double max_seconds = 0.0;
};

struct TrainOptions {
  AdamConfig adam;
  int batch_size = 48;
};

struct TrainRecord {
  int epochs = 0;
  double wall_seconds = 0.0;
  double final_loss = 0.0;
  std::vector<double> history;
  /// False when a non-finite loss stopped training early.
  bool finite = true;
};

/// Shuffled mini-batch Adam on the L1 loss. Budgets are checked at epoch
/// boundaries; epoch-limited runs are bitwise reproducible for a given rng.
TrainRecord train(RakiNetwork &net, TrainingSet const &set, TrainBudget const &budget, TrainOptions const &options,
                  Rng &rng);

/// Mean L1 of the network (inference mode) over a training set.
double evaluate_loss(RakiNetwork const &net, TrainingSet const &set);

/// Trained networks keyed by (slice, coil).
class RakiBank {
public:
  RakiBank(int sms, int coils, double fov_shift) : sms_(sms), coils_(coils), fov_shift_(fov_shift) {}

  void insert(int slice, int coil, RakiNetwork net);
  RakiNetwork const &at(int slice, int coil) const;
  bool contains(int slice, int coil) const { return nets_.count({slice, coil}) != 0; }

  int sms() const { return sms_; }
  int coils() const { return coils_; }
  double fov_shift() const { return fov_shift_; }
  std::map<std::pair<int, int>, RakiNetwork> const &nets() const { return nets_; }

private:
  int sms_;
  int coils_;
  double fov_shift_;
  std::map<std::pair<int, int>, RakiNetwork> nets_;
};

/// Per-slice multi-coil k-space estimates in acquisition (CAIPI-shifted)
/// coordinates.
std::vector<MultiCoil> unalias_shifted(RakiBank const &bank, MultiCoil const &aliased_frame);

/// As unalias_shifted, with each slice's phase ramp removed.
std::vector<MultiCoil> unalias(RakiBank const &bank, MultiCoil const &aliased_frame);

} // namespace raki
