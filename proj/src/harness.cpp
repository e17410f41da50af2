#include "raki/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "raki/augment.hpp"
#include "raki/errors.hpp"
#include "raki/fft.hpp"

namespace raki {

NetworkConfig to_network_config(Hyper const &h, int coils, double dropout_rate) {
  NetworkConfig c;
  c.num_layers = h.num_layers;
  c.filter_size = h.filter_size;
  c.num_filters = h.num_layers > 1 ? h.num_filters : 1;
  c.penultimate_filters = h.num_layers > 1 ? h.penultimate_filters : 1;
  c.batch_norm = h.batch_norm;
  c.dropout = h.dropout;
  c.dropout_rate = dropout_rate;
  c.in_channels = 2 * coils;
  c.out_channels = 2;
  return c;
}

Hyper canonical(Hyper h) {
  if (h.num_layers == 1) {
    h.num_filters = 0;
    h.penultimate_filters = 0;
    h.batch_norm = false;
    h.dropout = false;
  }
  return h;
}

GridSpec GridSpec::full() {
  GridSpec g;
  g.num_layers = {1, 3, 5, 7};
  g.filter_sizes = {1, 3, 5, 7, 9, 11};
  g.num_filters = {32, 64, 96, 128};
  g.penultimate_filters = {64, 128, 256, 384, 512};
  g.batch_norm = {false, true};
  g.dropout = {false, true};
  g.split_slice = {false, true};
  return g;
}

GridSpec GridSpec::single(Hyper const &h) {
  GridSpec g;
  g.num_layers = {h.num_layers};
  g.filter_sizes = {h.filter_size};
  g.num_filters = {h.num_filters};
  g.penultimate_filters = {h.penultimate_filters};
  g.batch_norm = {h.batch_norm};
  g.dropout = {h.dropout};
  g.split_slice = {h.split_slice};
  return g;
}

std::size_t GridSpec::cartesian_size() const {
  return num_layers.size() * filter_sizes.size() * num_filters.size() * penultimate_filters.size() *
         batch_norm.size() * dropout.size() * split_slice.size();
}

std::vector<Hyper> GridSpec::combinations() const {
  std::vector<Hyper> out;
  for (int layers : num_layers) {
    std::vector<int> const penult = layers == 1 ? std::vector<int>{0} : penultimate_filters;
    if (penult.empty()) continue;
    for (int fs : filter_sizes) {
      for (int nf : num_filters) {
        for (int pf : penult) {
          for (bool bn : batch_norm) {
            for (bool dr : dropout) {
              for (bool ss : split_slice) out.push_back({layers, fs, nf, pf, bn, dr, ss});
            }
          }
        }
      }
    }
  }
  // Duplicate list entries would yield duplicate combinations.
  std::vector<Hyper> unique;
  for (auto const &h : out) {
    if (std::find(unique.begin(), unique.end(), h) == unique.end()) unique.push_back(h);
  }
  return unique;
}

std::vector<int> select_heldout_frames(int frame_count, int count, int first) {
  if (count < 1) throw ParameterError("held-out frame count must be >= 1");
  if (first < 0) throw ParameterError("first held-out frame must be >= 0");
  int const available = frame_count - first;
  if (available < count) {
    throw DataError("requested " + std::to_string(count) + " held-out frames but only " +
                    std::to_string(std::max(available, 0)) + " are available");
  }
  std::vector<int> frames(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    frames[static_cast<std::size_t>(i)] =
        first + static_cast<int>(static_cast<long long>(i) * available / count);
  }
  return frames;
}

FrameScores evaluate(Unaliaser const &unaliaser, SimTimeseries const &series, int heldout_count) {
  FrameScores scores;
  scores.frames = select_heldout_frames(series.frame_count(), heldout_count);
  int const sms = series.calibration.sms();
  for (int f : scores.frames) {
    auto const est = unaliaser(series.frames[static_cast<std::size_t>(f)]);
    if (static_cast<int>(est.size()) != sms) throw ShapeError("evaluate: unaliaser returned the wrong slice count");
    double sum = 0.0;
    double count = 0.0;
    for (int s = 0; s < sms; ++s) {
      auto const truth = series.truth(f, s);
      auto const &slice = est[static_cast<std::size_t>(s)];
      if (slice.size() != truth.size()) throw ShapeError("evaluate: unaliaser returned the wrong coil count");
      for (std::size_t c = 0; c < truth.size(); ++c) {
        if (slice[c].rows() != truth[c].rows() || slice[c].cols() != truth[c].cols()) {
          throw ShapeError("evaluate: unaliased grid does not match the frame");
        }
        CxGrid const d = slice[c] - truth[c];
        sum += d.real().abs().sum() + d.imag().abs().sum();
        count += 2.0 * static_cast<double>(d.size());
      }
    }
    scores.l1.push_back(sum / count);
  }
  double total = 0.0;
  for (double v : scores.l1) total += v;
  scores.mean_l1 = total / static_cast<double>(scores.l1.size());
  return scores;
}

FrameScores evaluate(RakiBank const &bank, SimTimeseries const &series, int heldout_count) {
  return evaluate([&](MultiCoil const &f) { return unalias_shifted(bank, f); }, series, heldout_count);
}

FrameScores evaluate(GrappaBank const &bank, SimTimeseries const &series, int heldout_count) {
  return evaluate([&](MultiCoil const &f) { return unalias_shifted(bank, f); }, series, heldout_count);
}

char const *to_string(RunStatus s) {
  switch (s) {
  case RunStatus::Ok: return "ok";
  case RunStatus::NonFinite: return "nonfinite";
  case RunStatus::Error: return "error";
  }
  return "?";
}

std::uint64_t run_seed(std::uint64_t global_seed, std::uint64_t dataset_seed, Hyper const &h) {
  Hyper const c = canonical(h);
  std::uint64_t s = mix_seed(global_seed, dataset_seed);
  for (std::uint64_t v : {std::uint64_t(c.num_layers), std::uint64_t(c.filter_size), std::uint64_t(c.num_filters),
                          std::uint64_t(c.penultimate_filters), std::uint64_t(c.batch_norm), std::uint64_t(c.dropout),
                          std::uint64_t(c.split_slice)}) {
    s = mix_seed(s, v);
  }
  return s;
}

namespace {

TrainingSet training_set(Dataset const &d, bool split, int slice, int coil) {
  auto const &cal = d.series.calibration;
  return split ? build_split_slice_set(cal, slice, coil) : build_standard_set(cal, d.series.frames.at(0), slice, coil);
}

struct NetResult {
  RakiNetwork net;
  TrainRecord record;
  std::string error;
};

NetResult train_one(Dataset const &d, Hyper const &h, GridOptions const &o, std::uint64_t train_seed, int slice,
                    int coil) {
  NetResult r;
  auto const coils = d.series.calibration.coils();
  Rng rng(mix_seed(train_seed, static_cast<std::uint64_t>(slice * coils + coil)));
  r.net = build_network(to_network_config(h, coils, o.dropout_rate), rng);
  r.record = train(r.net, training_set(d, h.split_slice, slice, coil), o.budget, o.train, rng);
  return r;
}

} // namespace

RakiBank train_bank(Dataset const &dataset, Hyper const &h, GridOptions const &options, std::uint64_t train_seed,
                    std::vector<TrainRecord> *records) {
  auto const &cal = dataset.series.calibration;
  RakiBank bank(cal.sms(), cal.coils(), cal.fov_shift);
  for (int s = 0; s < cal.sms(); ++s) {
    for (int c = 0; c < cal.coils(); ++c) {
      auto r = train_one(dataset, h, options, train_seed, s, c);
      if (records) records->push_back(r.record);
      bank.insert(s, c, std::move(r.net));
    }
  }
  return bank;
}

namespace {

// One distinct training run: a canonical configuration on one dataset.
struct Run {
  std::size_t dataset;
  Hyper hyper;
  std::uint64_t seed;
  std::vector<NetResult> nets;
  std::atomic<int> remaining{0};
  EvalRecord result;
};

void finish_run(Run &run, Dataset const &d, GridOptions const &o) {
  auto &rec = run.result;
  rec.hyper = run.hyper;
  rec.dataset_seed = d.seed;
  rec.train_seed = run.seed;
  rec.epochs = std::numeric_limits<int>::max();
  for (auto const &n : run.nets) {
    if (!n.error.empty()) {
      rec.status = RunStatus::Error;
      rec.message = n.error;
    } else if (!n.record.finite && rec.status == RunStatus::Ok) {
      rec.status = RunStatus::NonFinite;
      rec.message = "non-finite training loss";
    }
    rec.epochs = std::min(rec.epochs, n.record.epochs);
    rec.wall_seconds += n.record.wall_seconds;
  }
  if (rec.status == RunStatus::Ok) {
    try {
      auto const &cal = d.series.calibration;
      RakiBank bank(cal.sms(), cal.coils(), cal.fov_shift);
      int const coils = cal.coils();
      for (std::size_t i = 0; i < run.nets.size(); ++i) {
        bank.insert(static_cast<int>(i) / coils, static_cast<int>(i) % coils, std::move(run.nets[i].net));
      }
      auto const scores = evaluate(bank, d.series, o.heldout_frames);
      rec.frames = scores.frames;
      rec.frame_l1 = scores.l1;
      rec.mean_l1 = scores.mean_l1;
      if (!std::isfinite(rec.mean_l1)) {
        rec.status = RunStatus::NonFinite;
        rec.message = "non-finite held-out loss";
      }
    } catch (std::exception const &e) {
      rec.status = RunStatus::Error;
      rec.message = e.what();
    }
  }
  if (rec.status != RunStatus::Ok) {
    rec.frames.clear();
    rec.frame_l1.clear();
    rec.mean_l1 = std::numeric_limits<double>::quiet_NaN();
  }
  run.nets.clear();
  run.nets.shrink_to_fit();
}

} // namespace

std::vector<EvalRecord> run_grid(std::vector<Dataset> const &datasets, GridSpec const &grid,
                                 GridOptions const &options) {
  auto const combos = grid.combinations();
  if (combos.empty()) throw ConfigError("run_grid: the grid is empty");
  if (datasets.empty()) throw ConfigError("run_grid: no datasets");
  if (options.workers < 1) throw ParameterError("run_grid: workers must be >= 1");
  for (auto const &d : datasets) {
    select_heldout_frames(d.series.frame_count(), options.heldout_frames); // validates up front
  }

  // Distinct runs, and the run each output record copies.
  std::vector<std::unique_ptr<Run>> runs;
  std::vector<std::size_t> record_run;
  for (std::size_t di = 0; di < datasets.size(); ++di) {
    std::map<std::uint64_t, std::vector<std::size_t>> seen;
    for (auto const &h : combos) {
      Hyper const key = canonical(h);
      std::uint64_t const seed = run_seed(options.seed, datasets[di].seed, key);
      std::size_t idx = runs.size();
      bool found = false;
      for (std::size_t r : seen[seed]) {
        if (runs[r]->hyper == key) {
          idx = r;
          found = true;
          break;
        }
      }
      if (!found) {
        auto run = std::make_unique<Run>();
        run->dataset = di;
        run->hyper = key;
        run->seed = seed;
        seen[seed].push_back(idx);
        runs.push_back(std::move(run));
      }
      record_run.push_back(idx);
    }
  }

  struct Task {
    std::size_t run;
    int slice;
    int coil;
  };
  std::vector<Task> tasks;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    auto const &cal = datasets[runs[r]->dataset].series.calibration;
    runs[r]->nets.resize(static_cast<std::size_t>(cal.sms() * cal.coils()));
    runs[r]->remaining = cal.sms() * cal.coils();
    for (int s = 0; s < cal.sms(); ++s) {
      for (int c = 0; c < cal.coils(); ++c) tasks.push_back({r, s, c});
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < tasks.size();) {
      auto const &task = tasks[t];
      auto &run = *runs[task.run];
      auto const &d = datasets[run.dataset];
      auto &slot = run.nets[static_cast<std::size_t>(task.slice * d.series.calibration.coils() + task.coil)];
      try {
        slot = train_one(d, run.hyper, options, run.seed, task.slice, task.coil);
      } catch (std::exception const &e) {
        slot.error = e.what();
      }
      // The worker finishing the last network of a run scores it.
      if (run.remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) finish_run(run, d, options);
      auto const n = done.fetch_add(1) + 1;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(n, tasks.size());
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < options.workers; ++w) pool.emplace_back(worker);
    worker();
  }

  std::vector<EvalRecord> records;
  records.reserve(record_run.size());
  std::size_t i = 0;
  for (std::size_t di = 0; di < datasets.size(); ++di) {
    for (auto const &h : combos) {
      EvalRecord rec = runs[record_run[i++]]->result;
      rec.hyper = h;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

std::vector<NormalizedRecord> normalize_and_rank(std::vector<EvalRecord> const &records, GroupKey const &key) {
  auto group_of = [&](EvalRecord const &r) { return key ? key(r) : r.dataset_seed; };
  std::map<std::uint64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[group_of(records[i])].push_back(i);

  std::vector<NormalizedRecord> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out[i].record = records[i];
    out[i].normalized = std::numeric_limits<double>::quiet_NaN();
    out[i].percentile = std::numeric_limits<double>::quiet_NaN();
  }
  for (auto const &[g, members] : groups) {
    std::vector<std::size_t> ok;
    for (std::size_t i : members) {
      if (records[i].status == RunStatus::Ok && std::isfinite(records[i].mean_l1)) ok.push_back(i);
    }
    if (ok.empty()) throw GroupError("normalize_and_rank: group " + std::to_string(g) + " has no successful records");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i : ok) best = std::min(best, records[i].mean_l1);
    auto const n = static_cast<double>(ok.size());
    for (std::size_t i : ok) {
      int better = 0;
      for (std::size_t j : ok) better += records[j].mean_l1 < records[i].mean_l1;
      out[i].rank = better + 1;
      out[i].normalized = records[i].mean_l1 == best ? 1.0 : records[i].mean_l1 / best;
      out[i].percentile = 100.0 * (n - out[i].rank + 0.5) / n;
    }
  }
  return out;
}

std::vector<MultiCoil> unshifted_truth(SimTimeseries const &series, int frame) {
  std::vector<MultiCoil> out;
  for (int s = 0; s < series.calibration.sms(); ++s) {
    out.push_back(undo_caipi_shift(series.truth(frame, s), s, series.calibration.fov_shift));
  }
  return out;
}

ErrorMap error_map(std::vector<MultiCoil> const &recon, std::vector<MultiCoil> const &reference,
                   std::vector<RealGrid> const *support) {
  if (recon.size() != reference.size()) throw ShapeError("error_map: slice counts differ");
  if (support && support->size() != reference.size()) throw ShapeError("error_map: support slice count differs");
  ErrorMap m;
  for (std::size_t s = 0; s < recon.size(); ++s) {
    auto const &a = recon[s];
    auto const &b = reference[s];
    if (a.size() != b.size() || a.empty()) throw ShapeError("error_map: coil counts differ");
    double l1 = 0.0;
    double count = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
      if (a[c].rows() != b[c].rows() || a[c].cols() != b[c].cols()) throw ShapeError("error_map: grids differ");
      CxGrid const d = a[c] - b[c];
      l1 += d.real().abs().sum() + d.imag().abs().sum();
      count += 2.0 * static_cast<double>(d.size());
    }
    m.kspace_l1.push_back(l1 / count);

    RealGrid const ra = rss(ifft2c(a));
    RealGrid const rb = rss(ifft2c(b));
    double const eps = 1e-6 * rb.maxCoeff() + std::numeric_limits<double>::min();
    RealGrid const pct = 100.0 * (ra - rb).abs() / (rb + eps);
    m.percent.push_back(pct);

    std::vector<double> values;
    for (Eigen::Index y = 0; y < pct.rows(); ++y) {
      for (Eigen::Index x = 0; x < pct.cols(); ++x) {
        if (!support) {
          values.push_back(pct(y, x));
        } else {
          auto const &mask = (*support)[s];
          if (mask.rows() != pct.rows() || mask.cols() != pct.cols()) throw ShapeError("error_map: support grid differs");
          if (mask(y, x) > 0.0) values.push_back(pct(y, x));
        }
      }
    }
    double median = std::numeric_limits<double>::quiet_NaN();
    if (!values.empty()) {
      auto const mid = values.size() / 2;
      std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
      median = values[mid];
      if (values.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid)));
      }
    }
    m.median_percent.push_back(median);
  }
  return m;
}

} // namespace raki
