#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "harness.hpp"
#include "sim.hpp"

namespace raki {

/// Everything a grid run needs. JSON layout (all keys optional, unknown
/// keys rejected):
///
///   {
///     "simulation": {"height", "width", "coils", "sms", "fov_shift",
///                    "frames", "amplitude", "noise_sigma",
///                    "calibration_noise"},
///     "seeds": [1, 2, 3, 4, 5],
///     "grid": {"num_layers": [...], "filter_size": [...],
///              "num_filters": [...], "penultimate_filters": [...],
///              "batch_norm": [...], "dropout": [...],
///              "split_slice": [...]},
///     "training": {"max_epochs", "max_seconds", "learning_rate", "beta1",
///                  "beta2", "epsilon", "weight_decay", "batch_size",
///                  "dropout_rate"},
///     "evaluation": {"heldout_frames", "grappa_kernel"},
///     "seed": 42,
///     "workers": 1,
///     "output_dir": "results"
///   }
struct HarnessConfig {
  SimConfig simulation;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  GridSpec grid = GridSpec::full();
  GridOptions options;
  int grappa_kernel = 5;
  std::string output_dir = "results";
};

HarnessConfig parse_config(std::string const &json_text);
HarnessConfig load_config(std::filesystem::path const &path);

} // namespace raki
