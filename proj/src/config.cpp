#include "raki/config.hpp"

#include <initializer_list>

#include "json.hpp"
#include "raki/errors.hpp"
#include "raki/io.hpp"

namespace raki {

namespace {

using nlohmann::json;

void only_keys(json const &obj, std::string const &where, std::initializer_list<char const *> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (auto const &[key, value] : obj.items()) {
    bool ok = false;
    for (char const *a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(json const &obj, char const *key, T &out, std::string const &where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (json::exception const &) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <typename T>
void read_list(json const &obj, char const *key, std::vector<T> &out, std::string const &where) {
  if (!obj.contains(key)) return;
  auto const &v = obj.at(key);
  if (!v.is_array() || v.empty()) throw ConfigError(where + "." + key + " must be a non-empty array");
  std::vector<T> values;
  try {
    for (auto const &e : v) values.push_back(e.get<T>());
  } catch (json::exception const &) {
    throw ConfigError(where + "." + key + " has an element of the wrong type");
  }
  out = std::move(values);
}

} // namespace

HarnessConfig parse_config(std::string const &json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (json::parse_error const &e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  only_keys(doc, "config",
            {"simulation", "seeds", "grid", "training", "evaluation", "seed", "workers", "output_dir"});
  HarnessConfig c;

  if (doc.contains("simulation")) {
    auto const &s = doc["simulation"];
    std::string const w = "simulation";
    only_keys(s, w, {"height", "width", "coils", "sms", "fov_shift", "frames", "amplitude", "noise_sigma",
                     "calibration_noise"});
    read(s, "height", c.simulation.height, w);
    read(s, "width", c.simulation.width, w);
    read(s, "coils", c.simulation.coils, w);
    read(s, "sms", c.simulation.sms, w);
    read(s, "fov_shift", c.simulation.fov_shift, w);
    read(s, "frames", c.simulation.frames, w);
    read(s, "amplitude", c.simulation.amplitude, w);
    read(s, "noise_sigma", c.simulation.noise_sigma, w);
    read(s, "calibration_noise", c.simulation.calibration_noise, w);
  }
  read_list(doc, "seeds", c.seeds, "config");

  if (doc.contains("grid")) {
    auto const &g = doc["grid"];
    std::string const w = "grid";
    only_keys(g, w, {"num_layers", "filter_size", "num_filters", "penultimate_filters", "batch_norm", "dropout",
                     "split_slice"});
    read_list(g, "num_layers", c.grid.num_layers, w);
    read_list(g, "filter_size", c.grid.filter_sizes, w);
    read_list(g, "num_filters", c.grid.num_filters, w);
    read_list(g, "penultimate_filters", c.grid.penultimate_filters, w);
    read_list(g, "batch_norm", c.grid.batch_norm, w);
    read_list(g, "dropout", c.grid.dropout, w);
    read_list(g, "split_slice", c.grid.split_slice, w);
  }

  auto &o = c.options;
  if (doc.contains("training")) {
    auto const &t = doc["training"];
    std::string const w = "training";
    only_keys(t, w, {"max_epochs", "max_seconds", "learning_rate", "beta1", "beta2", "epsilon", "weight_decay",
                     "batch_size", "dropout_rate"});
    read(t, "max_epochs", o.budget.max_epochs, w);
    read(t, "max_seconds", o.budget.max_seconds, w);
    read(t, "learning_rate", o.train.adam.learning_rate, w);
    read(t, "beta1", o.train.adam.beta1, w);
    read(t, "beta2", o.train.adam.beta2, w);
    read(t, "epsilon", o.train.adam.epsilon, w);
    read(t, "weight_decay", o.train.adam.weight_decay, w);
    read(t, "batch_size", o.train.batch_size, w);
    read(t, "dropout_rate", o.dropout_rate, w);
  }
  if (doc.contains("evaluation")) {
    auto const &e = doc["evaluation"];
    only_keys(e, "evaluation", {"heldout_frames", "grappa_kernel"});
    read(e, "heldout_frames", o.heldout_frames, "evaluation");
    read(e, "grappa_kernel", c.grappa_kernel, "evaluation");
  }
  read(doc, "seed", o.seed, "config");
  read(doc, "workers", o.workers, "config");
  read(doc, "output_dir", c.output_dir, "config");

  if (o.workers < 1) throw ConfigError("workers must be >= 1");
  if (o.budget.max_epochs < 0 || o.budget.max_seconds < 0.0 ||
      (o.budget.max_epochs == 0 && o.budget.max_seconds == 0.0)) {
    throw ConfigError("training needs max_epochs >= 1 or max_seconds > 0");
  }
  if (o.heldout_frames < 1) throw ConfigError("evaluation.heldout_frames must be >= 1");
  if (c.grappa_kernel < 1 || c.grappa_kernel % 2 == 0) throw ConfigError("evaluation.grappa_kernel must be odd");
  if (c.simulation.frames < o.heldout_frames + 1) {
    throw ConfigError("simulation.frames must exceed evaluation.heldout_frames (frame 0 is the training frame)");
  }
  return c;
}

HarnessConfig load_config(std::filesystem::path const &path) { return parse_config(read_text(path)); }

} // namespace raki
