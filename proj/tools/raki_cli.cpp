// Command line front end: simulate, train, grid, eval, report.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "raki/config.hpp"
#include "raki/errors.hpp"
#include "raki/grappa.hpp"
#include "raki/harness.hpp"
#include "raki/io.hpp"

namespace fs = std::filesystem;
using namespace raki;

namespace {

std::optional<std::string> env(char const *name) {
  char const *v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

HarnessConfig config_or_default(std::string const &path) {
  return path.empty() ? HarnessConfig{} : load_config(path);
}

void print_scores(FrameScores const &s) {
  std::printf("held-out frames: %zu\n", s.frames.size());
  for (std::size_t i = 0; i < s.frames.size(); ++i) std::printf("  frame %3d  L1 %.6g\n", s.frames[i], s.l1[i]);
  std::printf("mean held-out L1: %.9g\n", s.mean_l1);
}

void write_maps(fs::path const &dir, std::vector<MultiCoil> const &recon, Dataset const &d, int frame) {
  auto const m = error_map(recon, unshifted_truth(d.series, frame), &d.support);
  for (std::size_t s = 0; s < m.percent.size(); ++s) {
    auto const stem = dir / ("slice" + std::to_string(s) + "_frame" + std::to_string(frame) + "_percent_error");
    write_pgm(stem.string() + ".pgm", m.percent[s], 0.0, 100.0);
    write_raw(stem.string() + ".f64", m.percent[s]);
    std::printf("slice %zu: k-space L1 %.6g, median percent error in support %.4g%%\n", s, m.kspace_l1[s],
                m.median_percent[s]);
  }
  std::printf("error maps written to %s\n", dir.string().c_str());
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"RAKI / slice-GRAPPA simultaneous multi-slice unaliasing toolkit"};
  app.require_subcommand(1);

  // simulate
  auto *sim = app.add_subcommand("simulate", "Simulate an SMS dataset and write the binary container");
  std::string sim_config, sim_out;
  std::uint64_t sim_seed = 1;
  SimConfig sim_over;
  sim->add_option("--config", sim_config, "JSON config; its simulation section is used")->check(CLI::ExistingFile);
  sim->add_option("--seed", sim_seed, "Phantom/coil/noise seed");
  sim->add_option("-o,--out", sim_out, "Output dataset file")->required();
  auto *o_h = sim->add_option("--height", sim_over.height);
  auto *o_w = sim->add_option("--width", sim_over.width);
  auto *o_c = sim->add_option("--coils", sim_over.coils);
  auto *o_s = sim->add_option("--sms", sim_over.sms);
  auto *o_f = sim->add_option("--frames", sim_over.frames);
  auto *o_a = sim->add_option("--amplitude", sim_over.amplitude, "Per-slice intensity modulation amplitude");
  auto *o_n = sim->add_option("--noise", sim_over.noise_sigma, "Complex noise sigma of the frames");
  auto *o_v = sim->add_option("--fov-shift", sim_over.fov_shift, "CAIPI FOV shift fraction (0 = 1/sms)");

  // train
  auto *trn = app.add_subcommand("train", "Train the (slice, coil) networks of one configuration");
  std::string trn_data, trn_out, trn_config;
  Hyper hyper;
  bool standard = false;
  bool no_bn = false;
  std::optional<int> trn_epochs;
  std::optional<double> trn_seconds, trn_lr;
  std::optional<std::uint64_t> trn_seed;
  std::optional<int> trn_heldout;
  trn->add_option("-d,--dataset", trn_data, "Dataset file")->required()->check(CLI::ExistingFile);
  trn->add_option("-o,--out", trn_out, "Output network file");
  trn->add_option("--config", trn_config, "JSON config for training/evaluation defaults")->check(CLI::ExistingFile);
  trn->add_option("--layers", hyper.num_layers)->capture_default_str();
  trn->add_option("--filter-size", hyper.filter_size)->capture_default_str();
  trn->add_option("--filters", hyper.num_filters)->capture_default_str();
  trn->add_option("--penultimate", hyper.penultimate_filters)->capture_default_str();
  trn->add_flag("--no-batch-norm", no_bn);
  trn->add_flag("--dropout", hyper.dropout);
  trn->add_flag("--standard", standard, "Train on the single acquired frame instead of the split-slice set");
  trn->add_option("--epochs", trn_epochs);
  trn->add_option("--seconds", trn_seconds, "Wall-clock budget per network");
  trn->add_option("--lr", trn_lr);
  trn->add_option("--seed", trn_seed, "Global training seed");
  trn->add_option("--heldout", trn_heldout, "Held-out frames to score after training");

  // grid
  auto *grd = app.add_subcommand("grid", "Grid search over a JSON config");
  std::string grd_config;
  std::optional<int> grd_workers;
  std::optional<std::string> grd_out;
  bool grd_quiet = false;
  grd->add_option("-c,--config", grd_config, "JSON config")->required()->check(CLI::ExistingFile);
  grd->add_option("-w,--workers", grd_workers, "Worker threads (env RAKI_WORKERS)");
  grd->add_option("--output-dir", grd_out, "Output directory (env RAKI_OUTPUT_DIR)");
  grd->add_flag("-q,--quiet", grd_quiet);

  // eval
  auto *evl = app.add_subcommand("eval", "Score networks or a GRAPPA variant on held-out frames");
  std::string evl_data, evl_nets, evl_grappa, evl_save, evl_maps;
  int evl_kernel = 5;
  int evl_heldout = 20;
  std::optional<double> evl_lambda;
  evl->add_option("-d,--dataset", evl_data, "Dataset file")->required()->check(CLI::ExistingFile);
  auto *evl_net_opt = evl->add_option("--networks", evl_nets, "Trained network file")->check(CLI::ExistingFile);
  evl->add_option("--grappa", evl_grappa, "Fit GRAPPA kernels instead: slice | split")
      ->check(CLI::IsMember({"slice", "split"}))
      ->excludes(evl_net_opt);
  evl->add_option("--kernel", evl_kernel, "GRAPPA kernel size")->capture_default_str();
  evl->add_option("--lambda", evl_lambda, "GRAPPA ridge parameter (default 1e-6 trace / n)");
  evl->add_option("--save-kernels", evl_save, "Write the fitted GRAPPA kernels");
  evl->add_option("--heldout", evl_heldout)->capture_default_str();
  evl->add_option("--maps", evl_maps, "Directory for percent-error maps of the first held-out frame");

  // report
  auto *rep = app.add_subcommand("report", "Normalize and rank an existing records.csv");
  std::string rep_records, rep_out;
  rep->add_option("-r,--records", rep_records, "records.csv")->required()->check(CLI::ExistingFile);
  rep->add_option("--output-dir", rep_out, "Directory for normalized.csv and summary.json (default: beside records)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      SimConfig cfg = config_or_default(sim_config).simulation;
      if (*o_h) cfg.height = sim_over.height;
      if (*o_w) cfg.width = sim_over.width;
      if (*o_c) cfg.coils = sim_over.coils;
      if (*o_s) cfg.sms = sim_over.sms;
      if (*o_f) cfg.frames = sim_over.frames;
      if (*o_a) cfg.amplitude = sim_over.amplitude;
      if (*o_n) cfg.noise_sigma = sim_over.noise_sigma;
      if (*o_v) cfg.fov_shift = sim_over.fov_shift;
      auto const d = simulate(cfg, sim_seed);
      write_dataset(sim_out, d);
      std::printf("wrote %s: %ldx%ld, %d coils, %d slices, %d frames, seed %llu\n", sim_out.c_str(),
                  static_cast<long>(cfg.height), static_cast<long>(cfg.width), cfg.coils, cfg.sms, cfg.frames,
                  static_cast<unsigned long long>(sim_seed));
      return 0;
    }

    if (*trn) {
      auto const cfg = config_or_default(trn_config);
      GridOptions o = cfg.options;
      if (trn_epochs) o.budget.max_epochs = *trn_epochs;
      if (trn_seconds) {
        o.budget.max_seconds = *trn_seconds;
        if (!trn_epochs) o.budget.max_epochs = 0;
      }
      if (trn_lr) o.train.adam.learning_rate = *trn_lr;
      if (trn_seed) o.seed = *trn_seed;
      if (trn_heldout) o.heldout_frames = *trn_heldout;
      hyper.batch_norm = !no_bn;
      hyper.split_slice = !standard;
      if (hyper.num_layers == 1) hyper = canonical(hyper);

      auto const d = read_dataset(trn_data);
      auto const seed = run_seed(o.seed, d.seed, hyper);
      std::vector<TrainRecord> records;
      auto const bank = train_bank(d, hyper, o, seed, &records);
      int i = 0;
      for (auto const &r : records) {
        std::printf("slice %d coil %2d: %d epochs, final L1 %.6g, %.2fs%s\n", i / bank.coils(), i % bank.coils(),
                    r.epochs, r.final_loss, r.wall_seconds, r.finite ? "" : " (non-finite)");
        ++i;
      }
      if (d.series.frame_count() > o.heldout_frames) print_scores(evaluate(bank, d.series, o.heldout_frames));
      if (!trn_out.empty()) {
        write_networks(trn_out, bank);
        std::printf("wrote %s\n", trn_out.c_str());
      }
      return 0;
    }

    if (*grd) {
      auto cfg = load_config(grd_config);
      if (auto w = env("RAKI_WORKERS")) {
        try {
          cfg.options.workers = std::stoi(*w);
        } catch (std::exception const &) {
          throw ConfigError("RAKI_WORKERS is not an integer: " + *w);
        }
      }
      if (auto dir = env("RAKI_OUTPUT_DIR")) cfg.output_dir = *dir;
      if (grd_workers) cfg.options.workers = *grd_workers;
      if (grd_out) cfg.output_dir = *grd_out;
      if (cfg.options.workers < 1) throw ConfigError("workers must be >= 1");

      std::vector<Dataset> datasets;
      for (auto seed : cfg.seeds) datasets.push_back(simulate(cfg.simulation, seed));
      if (!grd_quiet) {
        cfg.options.progress = [](std::size_t done, std::size_t total) {
          std::fprintf(stderr, "\r%zu / %zu networks", done, total);
          if (done == total) std::fputc('\n', stderr);
        };
      }
      auto const combos = cfg.grid.combinations();
      std::printf("%zu combinations x %zu datasets, %d workers\n", combos.size(), datasets.size(),
                  cfg.options.workers);
      auto const records = run_grid(datasets, cfg.grid, cfg.options);
      fs::path const out = cfg.output_dir;
      write_text(out / "records.csv", records_csv(records));
      write_text(out / "timing.csv", timing_csv(records));
      auto const ranked = normalize_and_rank(records);
      write_text(out / "normalized.csv", normalized_csv(ranked));
      write_text(out / "summary.json", summary_json(ranked));
      std::printf("wrote records.csv, timing.csv, normalized.csv, summary.json to %s\n", out.string().c_str());
      return 0;
    }

    if (*evl) {
      auto const d = read_dataset(evl_data);
      std::vector<MultiCoil> first_recon;
      int const first = select_heldout_frames(d.series.frame_count(), evl_heldout).front();
      if (!evl_nets.empty()) {
        auto const bank = read_networks(evl_nets);
        print_scores(evaluate(bank, d.series, evl_heldout));
        if (!evl_maps.empty()) write_maps(evl_maps, unalias(bank, d.series.frames[first]), d, first);
      } else if (!evl_grappa.empty()) {
        auto const kind = evl_grappa == "split" ? GrappaKind::SplitSlice : GrappaKind::SliceGrappa;
        auto const bank = fit_grappa_bank(d.series.calibration, kind, evl_kernel, evl_lambda);
        print_scores(evaluate(bank, d.series, evl_heldout));
        if (!evl_save.empty()) write_grappa(evl_save, bank);
        if (!evl_maps.empty()) write_maps(evl_maps, unalias(bank, d.series.frames[first]), d, first);
      } else {
        throw ConfigError("eval needs --networks or --grappa");
      }
      return 0;
    }

    if (*rep) {
      auto const records = parse_records_csv(read_text(rep_records));
      fs::path const out = rep_out.empty() ? fs::path(rep_records).parent_path() : fs::path(rep_out);
      auto const ranked = normalize_and_rank(records);
      write_text(out / "normalized.csv", normalized_csv(ranked));
      write_text(out / "summary.json", summary_json(ranked));
      std::printf("ranked %zu records; wrote normalized.csv and summary.json to %s\n", records.size(),
                  out.empty() ? "." : out.string().c_str());
      return 0;
    }
  } catch (raki::Error const &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
