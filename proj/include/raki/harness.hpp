#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grappa.hpp"
#include "network.hpp"
#include "sim.hpp"

namespace raki {

/// One point of the hyperparameter grid.
struct Hyper {
  int num_layers = 3;
  int filter_size = 5;
  int num_filters = 32;
  /// 0 when the network has no penultimate layer (num_layers == 1).
  int penultimate_filters = 128;
  bool batch_norm = true;
  bool dropout = false;
  bool split_slice = true;

  friend bool operator==(Hyper const &, Hyper const &) = default;
};

NetworkConfig to_network_config(Hyper const &h, int coils, double dropout_rate = 0.5);

/// The parameters that actually shape training. A single-layer network is
/// one bare convolution, so its filter counts are zeroed and its batch-norm
/// and dropout flags cleared.
Hyper canonical(Hyper h);

struct GridSpec {
  std::vector<int> num_layers;
  std::vector<int> filter_sizes;
  std::vector<int> num_filters;
  std::vector<int> penultimate_filters;
  std::vector<bool> batch_norm;
  std::vector<bool> dropout;
  std::vector<bool> split_slice;

  /// layers 1:2:7, filter 1:2:11, filters 32:32:128, penultimate
  /// {64, 128, 256, 384, 512}, and both settings of each flag.
  static GridSpec full();
  static GridSpec single(Hyper const &h);

  /// Product of the list lengths.
  std::size_t cartesian_size() const;

  /// Distinct combinations in a fixed nested order (layers outermost, the
  /// split-slice flag innermost). The penultimate list collapses to a single
  /// entry (0) for single-layer networks, which have no such layer.
  std::vector<Hyper> combinations() const;
};

/// `count` equally spaced frames out of [first, frame_count): index
/// first + floor(i * (frame_count - first) / count).
std::vector<int> select_heldout_frames(int frame_count, int count, int first = 1);

/// Maps an aliased frame to per-slice, per-coil k-space in acquisition
/// (CAIPI-shifted) coordinates.
using Unaliaser = std::function<std::vector<MultiCoil>(MultiCoil const &)>;

struct FrameScores {
  std::vector<int> frames;
  /// Mean |error| over real and imaginary parts of every voxel, coil and
  /// slice of each frame.
  std::vector<double> l1;
  double mean_l1 = 0.0;
};

/// Held-out L1 against the per-frame ground truth.
FrameScores evaluate(Unaliaser const &unaliaser, SimTimeseries const &series, int heldout_count);
FrameScores evaluate(RakiBank const &bank, SimTimeseries const &series, int heldout_count);
FrameScores evaluate(GrappaBank const &bank, SimTimeseries const &series, int heldout_count);

enum class RunStatus { Ok, NonFinite, Error };
char const *to_string(RunStatus s);

struct EvalRecord {
  Hyper hyper;
  std::uint64_t dataset_seed = 0;
  /// Seed the (slice, coil) network generators were derived from.
  std::uint64_t train_seed = 0;
  RunStatus status = RunStatus::Ok;
  std::string message;
  std::vector<int> frames;
  std::vector<double> frame_l1;
  double mean_l1 = 0.0;
  /// Fewest epochs completed by any network of the bank.
  int epochs = 0;
  /// Summed training time of the bank.
  double wall_seconds = 0.0;

  Provenance provenance() const { return hyper.split_slice ? Provenance::SplitSlice : Provenance::Standard; }
};

struct GridOptions {
  TrainBudget budget;
  TrainOptions train;
  double dropout_rate = 0.5;
  int heldout_frames = 20;
  int workers = 1;
  std::uint64_t seed = 42;
  /// Called after each finished network with (done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

/// Derived seed of one (dataset, configuration) run; the network of
/// (slice, coil) uses mix_seed(train_seed, slice * coils + coil).
std::uint64_t run_seed(std::uint64_t global_seed, std::uint64_t dataset_seed, Hyper const &h);

/// Train and evaluate every combination on every dataset. Runs whose
/// canonical configs coincide are trained once and copied. Records come
/// back dataset-major in combination order, independent of worker count.
std::vector<EvalRecord> run_grid(std::vector<Dataset> const &datasets, GridSpec const &grid,
                                 GridOptions const &options);

/// Train the (slice, coil) networks of one configuration.
RakiBank train_bank(Dataset const &dataset, Hyper const &h, GridOptions const &options, std::uint64_t train_seed,
                    std::vector<TrainRecord> *records = nullptr);

struct NormalizedRecord {
  EvalRecord record;
  /// mean_l1 / min mean_l1 within the group.
  double normalized = 0.0;
  /// 1 = best; ties share the lower rank.
  int rank = 0;
  /// 100 * (N - rank + 0.5) / N.
  double percentile = 0.0;
};

using GroupKey = std::function<std::uint64_t(EvalRecord const &)>;

/// Rank records within groups (dataset seed by default). Failed records are
/// kept with NaN normalized loss and rank 0. Output order follows the input.
std::vector<NormalizedRecord> normalize_and_rank(std::vector<EvalRecord> const &records, GroupKey const &key = {});

struct ErrorMap {
  /// Per slice: 100 * |rss(recon) - rss(ref)| / (rss(ref) + eps).
  std::vector<RealGrid> percent;
  /// Per slice mean |k-space error| over real and imaginary parts.
  std::vector<double> kspace_l1;
  /// Per slice median of the percent map inside the support (whole grid
  /// when no support is given).
  std::vector<double> median_percent;
};

/// Compare unshifted per-slice multi-coil k-space. eps is 1e-6 of the
/// slice's largest reference magnitude.
ErrorMap error_map(std::vector<MultiCoil> const &recon, std::vector<MultiCoil> const &reference,
                   std::vector<RealGrid> const *support = nullptr);

/// Ground truth of one frame in unshifted coordinates.
std::vector<MultiCoil> unshifted_truth(SimTimeseries const &series, int frame);

} // namespace raki
