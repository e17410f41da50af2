#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "grappa.hpp"
#include "harness.hpp"
#include "network.hpp"
#include "sim.hpp"

// Binary containers are little-endian throughout: u32/u64 integers, f64
// reals, complex values as (re, im) f64 pairs, grids row-major (ky, kx).
//
// Dataset ("RAKIDSET", version 1):
//   u32 height, width, coils, sms, frames, calibration_noise
//   f64 fov_shift, amplitude, noise_sigma
//   u64 seed
//   f64 factors[frames][sms]
//   calibration  complex[coils][sms][height][width]   (coil-major)
//   frames       complex[frames][coils][height][width]
//   support      u8[sms][height][width]
//
// Network bank ("RAKINETS", version 1):
//   u32 sms, coils; f64 fov_shift; then sms*coils networks in (slice, coil)
//   order, each:
//     i32 num_layers, filter_size, num_filters, penultimate_filters,
//         in_channels, out_channels; u32 batch_norm, dropout;
//     f64 dropout_rate, scale; u32 layer_count; per layer:
//       u32 out, in, k, relu, dropout, batch_norm
//       f64 weights[out][in][k][k]
//       if batch_norm: f64 gamma[out], beta[out], running_mean[out],
//                      running_var[out], momentum, epsilon
//
// GRAPPA bank ("RAKIGRAP", version 1):
//   u32 sms, coils, kernel; f64 fov_shift; then per (slice, coil):
//     f64 lambda; complex weights[coils][k][k]
//
// Every container begins with its 8-byte magic followed by u32 version.

namespace raki {

void write_dataset(std::filesystem::path const &path, Dataset const &d);
Dataset read_dataset(std::filesystem::path const &path);

void write_networks(std::filesystem::path const &path, RakiBank const &bank);
RakiBank read_networks(std::filesystem::path const &path);

void write_grappa(std::filesystem::path const &path, GrappaBank const &bank);
GrappaBank read_grappa(std::filesystem::path const &path);

/// Fixed column order:
///   dataset_seed, num_layers, filter_size, num_filters,
///   penultimate_filters, batch_norm, dropout, split_slice, provenance,
///   train_seed, status, epochs, mean_l1, l1_frame_<index>...
/// Reals are printed with 17 significant digits; failed runs leave the loss
/// columns empty. Wall-clock times are written separately (timing.csv) so
/// this file is reproducible byte for byte.
std::string records_csv(std::vector<EvalRecord> const &records);
std::vector<EvalRecord> parse_records_csv(std::string const &text);

/// dataset_seed, the hyperparameter columns, train_seed, wall_seconds.
std::string timing_csv(std::vector<EvalRecord> const &records);

/// Records with normalized loss, rank and percentile; the first line is a
/// comment stating the percentile convention.
std::string normalized_csv(std::vector<NormalizedRecord> const &records);

/// Per-group best configuration and normalized-loss statistics.
std::string summary_json(std::vector<NormalizedRecord> const &records);

/// 8-bit binary PGM, values mapped linearly from [lo, hi] to [0, 255].
void write_pgm(std::filesystem::path const &path, RealGrid const &image, double lo, double hi);

/// Raw little-endian f64 samples, row-major, no header.
void write_raw(std::filesystem::path const &path, RealGrid const &image);

std::string read_text(std::filesystem::path const &path);
void write_text(std::filesystem::path const &path, std::string const &text);

} // namespace raki
