#include "raki/augment.hpp"

#include <string>

namespace raki {

char const *to_string(Provenance p) { return p == Provenance::SplitSlice ? "split-slice" : "standard"; }

std::vector<std::uint32_t> enumerate_subsets(int n) {
  if (n < 1 || n > 16) throw ParameterError("enumerate_subsets: n must be in [1, 16], got " + std::to_string(n));
  std::vector<std::uint32_t> masks(std::size_t{1} << n);
  for (std::uint32_t m = 0; m < masks.size(); ++m) masks[m] = m;
  return masks;
}

double normalization_scale(MultiCoil const &full_alias) {
  double peak = 0.0;
  for (auto const &g : full_alias) peak = std::max(peak, g.abs().maxCoeff());
  if (!(peak > 0.0)) throw DataError("normalization_scale: aliased input is identically zero");
  return 1.0 / peak;
}

namespace {
void require_targets(SlicePacket const &calibration, int target_slice, int target_coil) {
  if (target_slice < 0 || target_slice >= calibration.sms()) {
    throw IndexError("target slice " + std::to_string(target_slice) + " out of range [0, " +
                     std::to_string(calibration.sms()) + ")");
  }
  if (target_coil < 0 || target_coil >= calibration.coils()) {
    throw IndexError("target coil " + std::to_string(target_coil) + " out of range [0, " +
                     std::to_string(calibration.coils()) + ")");
  }
}
} // namespace

TrainingSet build_split_slice_set(SlicePacket const &calibration, int target_slice, int target_coil) {
  require_targets(calibration, target_slice, target_coil);
  TrainingSet set;
  set.target_slice = target_slice;
  set.target_coil = target_coil;
  set.provenance = Provenance::SplitSlice;
  set.scale = normalization_scale(sms_alias(calibration));

  auto const &target_grid =
      calibration.slices[static_cast<std::size_t>(target_slice)][static_cast<std::size_t>(target_coil)];
  Tensor3d const target = to_channels(target_grid, set.scale);
  for (auto const mask : enumerate_subsets(calibration.sms())) {
    TrainingSample s;
    s.mask = mask;
    s.input = to_channels(alias_subset(calibration, mask), set.scale);
    s.target = (mask >> target_slice & 1u) ? target : Tensor3d(2, target.height(), target.width());
    set.samples.push_back(std::move(s));
  }
  return set;
}

TrainingSet build_standard_set(SlicePacket const &calibration, MultiCoil const &aliased_frame, int target_slice,
                               int target_coil) {
  require_targets(calibration, target_slice, target_coil);
  if (aliased_frame.size() != static_cast<std::size_t>(calibration.coils()) ||
      aliased_frame[0].rows() != calibration.height() || aliased_frame[0].cols() != calibration.width()) {
    throw ShapeError("build_standard_set: aliased frame does not match the calibration geometry");
  }
  TrainingSet set;
  set.target_slice = target_slice;
  set.target_coil = target_coil;
  set.provenance = Provenance::Standard;
  set.scale = normalization_scale(aliased_frame);

  TrainingSample s;
  s.mask = calibration.sms() >= 32 ? ~0u : (1u << calibration.sms()) - 1u;
  s.input = to_channels(aliased_frame, set.scale);
  s.target = to_channels(
      calibration.slices[static_cast<std::size_t>(target_slice)][static_cast<std::size_t>(target_coil)], set.scale);
  set.samples.push_back(std::move(s));
  return set;
}

} // namespace raki
