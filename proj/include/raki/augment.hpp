#pragma once

#include <cstdint>
#include <vector>

#include "sim.hpp"
#include "tensor.hpp"

namespace raki {

struct TrainingSample {
  /// 2 x coils channels of (synthetically) aliased k-space.
  Tensor3d input;
  /// 2 channels: real/imag of the target slice and coil.
  Tensor3d target;
  /// Bit s set when slice s is summed into the input.
  std::uint32_t mask = 0;
};

enum class Provenance { Standard, SplitSlice };

char const *to_string(Provenance p);

struct TrainingSet {
  std::vector<TrainingSample> samples;
  int target_slice = 0;
  int target_coil = 0;
  Provenance provenance = Provenance::Standard;
  /// Multiplier applied to every input and target; divide network outputs by
  /// it to return to acquisition units.
  double scale = 1.0;
};

/// All 2^n slice masks in ascending order, the empty subset included.
std::vector<std::uint32_t> enumerate_subsets(int n);

/// 1 / max |k| over all coils of the fully aliased input.
double normalization_scale(MultiCoil const &full_alias);

/// One sample per subset: input = coil-wise sum of the included slices,
/// target = the target slice/coil k-space when included, otherwise zero.
TrainingSet build_split_slice_set(SlicePacket const &calibration, int target_slice, int target_coil);

/// Original scheme: a single acquired aliased frame against the calibration
/// k-space of the target slice/coil.
TrainingSet build_standard_set(SlicePacket const &calibration, MultiCoil const &aliased_frame, int target_slice,
                               int target_coil);

} // namespace raki
