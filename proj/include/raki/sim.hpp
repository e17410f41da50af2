#pragma once

#include <cstdint>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace raki {

struct CoilProfile {
  int index = 0;
  CxGrid sensitivity;
};

/// The n single-band multi-coil k-space slices excited together, each already
/// carrying its CAIPI phase ramp. slices[s][c] is slice s, coil c.
struct SlicePacket {
  double fov_shift = 0.5;
  std::vector<MultiCoil> slices;
  /// Applied image-domain shift of each slice in voxels along phase-encode.
  std::vector<double> shift_voxels;

  int sms() const { return static_cast<int>(slices.size()); }
  int coils() const { return slices.empty() ? 0 : static_cast<int>(slices.front().size()); }
  Eigen::Index height() const { return slices.at(0).at(0).rows(); }
  Eigen::Index width() const { return slices.at(0).at(0).cols(); }
};

struct SimTimeseries {
  /// Noiseless (unless requested) single-band slices in acquisition (shifted)
  /// coordinates; the training labels.
  SlicePacket calibration;
  /// Aliased multi-coil k-space per frame. Frame 0 is the training input.
  std::vector<MultiCoil> frames;
  /// Intensity factor applied to each slice in each frame; frame 0 is all ones.
  std::vector<std::vector<double>> factors;
  double amplitude = 0.0;
  double noise_sigma = 0.0;

  int frame_count() const { return static_cast<int>(frames.size()); }
  /// Noiseless single-band k-space of one slice as it appears in a frame.
  MultiCoil truth(int frame, int slice) const;
};

struct SimConfig {
  Eigen::Index height = 32;
  Eigen::Index width = 32;
  int coils = 8;
  int sms = 2;
  /// 0 selects 1/sms.
  double fov_shift = 0.0;
  int frames = 21;
  double amplitude = 0.1;
  double noise_sigma = 0.01;
  bool calibration_noise = false;

  double effective_fov_shift() const { return fov_shift > 0.0 ? fov_shift : 1.0 / sms; }
};

/// A complete simulated acquisition plus the ground truth needed to score it.
struct Dataset {
  SimConfig config;
  std::uint64_t seed = 0;
  SimTimeseries series;
  /// Phantom support per slice in unshifted image coordinates.
  std::vector<RealGrid> support;
};

std::vector<RealGrid> make_phantom(Eigen::Index height, Eigen::Index width, int slice_count, Rng &rng);
std::vector<CoilProfile> make_coils(Eigen::Index height, Eigen::Index width, int coil_count, Rng &rng);

/// Per coil: k-space = fft2c(sensitivity * image).
MultiCoil encode_slice(RealGrid const &image, std::vector<CoilProfile> const &coils);

double caipi_shift_voxels(int slice_index, double fov_shift, Eigen::Index n);

/// Multiply by exp(-2 pi i (ky - N/2) delta / N) along phase-encode, which
/// circularly shifts the image by delta voxels (any real delta).
CxGrid apply_phase_ramp(CxGrid const &ks, double delta);
CxGrid apply_caipi_shift(CxGrid const &ks, int slice_index, double fov_shift);
MultiCoil apply_caipi_shift(MultiCoil const &ks, int slice_index, double fov_shift);
MultiCoil undo_caipi_shift(MultiCoil const &ks, int slice_index, double fov_shift);

/// Shift each unshifted slice and collect them into a packet.
SlicePacket make_packet(std::vector<MultiCoil> const &unshifted, double fov_shift);

/// Per coil, the complex sum over the slices of the packet.
MultiCoil sms_alias(SlicePacket const &packet);

/// Sum over a subset of slices selected by mask bit s.
MultiCoil alias_subset(SlicePacket const &packet, std::uint32_t mask);

SimTimeseries make_timeseries(SlicePacket const &packet, int frames, double amplitude, double noise_sigma, Rng &rng,
                              bool calibration_noise = false);

Dataset simulate(SimConfig const &config, std::uint64_t seed);

/// Root-sum-of-squares coil combination in image space.
RealGrid rss(MultiCoil const &images);

} // namespace raki
