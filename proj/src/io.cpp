#include "raki/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"
#include "raki/errors.hpp"

namespace raki {

namespace {

constexpr std::uint32_t format_version = 1;

class Writer {
public:
  void u32(std::uint32_t v) { put(v, 4); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void magic(char const (&m)[9]) {
    bytes_.append(m, 8);
    u32(format_version);
  }
  void grid(CxGrid const &g) {
    for (Eigen::Index y = 0; y < g.rows(); ++y) {
      for (Eigen::Index x = 0; x < g.cols(); ++x) {
        f64(g(y, x).real());
        f64(g(y, x).imag());
      }
    }
  }
  void save(std::filesystem::path const &path) const { write_text(path, bytes_); }

private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string bytes_;
};

class Reader {
public:
  explicit Reader(std::filesystem::path const &path) : bytes_(read_text(path)), name_(path.string()) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  void magic(char const (&m)[9]) {
    need(8);
    if (std::memcmp(bytes_.data() + pos_, m, 8) != 0) fail("bad magic, expected " + std::string(m, 8));
    pos_ += 8;
    auto const v = u32();
    if (v != format_version) fail("unsupported version " + std::to_string(v));
  }
  CxGrid grid(Eigen::Index h, Eigen::Index w) {
    CxGrid g(h, w);
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        double const re = f64();
        g(y, x) = Complex(re, f64());
      }
    }
    return g;
  }
  // Guard counts read from the file before allocating for them.
  std::uint32_t count(std::uint32_t v, std::uint32_t limit, char const *what) {
    if (v > limit) fail(std::string(what) + " out of range: " + std::to_string(v));
    return v;
  }
  void finish() const {
    if (pos_ != bytes_.size()) fail("trailing bytes");
  }
  [[noreturn]] void fail(std::string const &what) const { throw FormatError(name_ + ": " + what); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated file");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

constexpr char dataset_magic[9] = "RAKIDSET";
constexpr char networks_magic[9] = "RAKINETS";
constexpr char grappa_magic[9] = "RAKIGRAP";

std::string number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_network(Writer &w, RakiNetwork const &net) {
  auto const &c = net.config;
  w.i32(c.num_layers);
  w.i32(c.filter_size);
  w.i32(c.num_filters);
  w.i32(c.penultimate_filters);
  w.i32(c.in_channels);
  w.i32(c.out_channels);
  w.u32(c.batch_norm);
  w.u32(c.dropout);
  w.f64(c.dropout_rate);
  w.f64(net.scale);
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (auto const &l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.conv.out_channels()));
    w.u32(static_cast<std::uint32_t>(l.conv.in_channels()));
    w.u32(static_cast<std::uint32_t>(l.conv.kernel()));
    w.u32(l.relu);
    w.u32(l.dropout);
    w.u32(l.batch_norm.has_value());
    for (Eigen::Index i = 0; i < l.conv.size(); ++i) w.f64(l.conv.data()[i]);
    if (l.batch_norm) {
      auto const &bn = *l.batch_norm;
      for (auto const *v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) {
        for (Eigen::Index i = 0; i < v->size(); ++i) w.f64((*v)(i));
      }
      w.f64(bn.momentum);
      w.f64(bn.epsilon);
    }
  }
}

RakiNetwork read_network(Reader &r) {
  RakiNetwork net;
  auto &c = net.config;
  c.num_layers = r.i32();
  c.filter_size = r.i32();
  c.num_filters = r.i32();
  c.penultimate_filters = r.i32();
  c.in_channels = r.i32();
  c.out_channels = r.i32();
  c.batch_norm = r.u32() != 0;
  c.dropout = r.u32() != 0;
  c.dropout_rate = r.f64();
  net.scale = r.f64();
  try {
    c.validate();
  } catch (ConfigError const &e) {
    r.fail(e.what());
  }
  auto const shapes = layer_shapes(c);
  auto const n = r.u32();
  if (n != shapes.size()) r.fail("layer count does not match the stored config");
  for (std::uint32_t i = 0; i < n; ++i) {
    int const out = static_cast<int>(r.u32()), in = static_cast<int>(r.u32()), k = static_cast<int>(r.u32());
    if (out != shapes[i].out_channels || in != shapes[i].in_channels || k != shapes[i].kernel) {
      r.fail("layer " + std::to_string(i) + " shape does not match the stored config");
    }
    Layer l;
    l.relu = r.u32() != 0;
    l.dropout = r.u32() != 0;
    bool const bn = r.u32() != 0;
    l.conv = ConvWeightsd(out, in, k);
    for (Eigen::Index j = 0; j < l.conv.size(); ++j) l.conv.data()[j] = r.f64();
    if (bn) {
      BatchNormState<double> s(out);
      for (auto *v : {&s.gamma, &s.beta, &s.running_mean, &s.running_var}) {
        for (Eigen::Index j = 0; j < v->size(); ++j) (*v)(j) = r.f64();
      }
      s.momentum = r.f64();
      s.epsilon = r.f64();
      l.batch_norm = std::move(s);
    }
    net.layers.push_back(std::move(l));
  }
  return net;
}

} // namespace

std::string read_text(std::filesystem::path const &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(std::filesystem::path const &path, std::string const &text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_dataset(std::filesystem::path const &path, Dataset const &d) {
  auto const &s = d.series;
  auto const &cal = s.calibration;
  Writer w;
  w.magic(dataset_magic);
  w.u32(static_cast<std::uint32_t>(cal.height()));
  w.u32(static_cast<std::uint32_t>(cal.width()));
  w.u32(static_cast<std::uint32_t>(cal.coils()));
  w.u32(static_cast<std::uint32_t>(cal.sms()));
  w.u32(static_cast<std::uint32_t>(s.frame_count()));
  w.u32(d.config.calibration_noise);
  w.f64(cal.fov_shift);
  w.f64(s.amplitude);
  w.f64(s.noise_sigma);
  w.u64(d.seed);
  for (auto const &f : s.factors) {
    for (double v : f) w.f64(v);
  }
  for (int c = 0; c < cal.coils(); ++c) {
    for (int sl = 0; sl < cal.sms(); ++sl) w.grid(cal.slices[sl][c]);
  }
  for (auto const &frame : s.frames) {
    for (auto const &g : frame) w.grid(g);
  }
  for (auto const &m : d.support) {
    for (Eigen::Index y = 0; y < m.rows(); ++y) {
      for (Eigen::Index x = 0; x < m.cols(); ++x) w.u8(m(y, x) > 0.0 ? 1 : 0);
    }
  }
  w.save(path);
}

Dataset read_dataset(std::filesystem::path const &path) {
  Reader r(path);
  r.magic(dataset_magic);
  Dataset d;
  auto &cfg = d.config;
  cfg.height = r.count(r.u32(), 1 << 12, "height");
  cfg.width = r.count(r.u32(), 1 << 12, "width");
  cfg.coils = static_cast<int>(r.count(r.u32(), 1024, "coil count"));
  cfg.sms = static_cast<int>(r.count(r.u32(), 16, "SMS factor"));
  cfg.frames = static_cast<int>(r.count(r.u32(), 1 << 16, "frame count"));
  cfg.calibration_noise = r.u32() != 0;
  cfg.fov_shift = r.f64();
  cfg.amplitude = r.f64();
  cfg.noise_sigma = r.f64();
  d.seed = r.u64();
  if (cfg.height < 1 || cfg.width < 1 || cfg.coils < 1 || cfg.sms < 1 || cfg.frames < 1) r.fail("empty dimension");

  auto &s = d.series;
  s.amplitude = cfg.amplitude;
  s.noise_sigma = cfg.noise_sigma;
  s.factors.assign(static_cast<std::size_t>(cfg.frames), std::vector<double>(static_cast<std::size_t>(cfg.sms)));
  for (auto &f : s.factors) {
    for (double &v : f) v = r.f64();
  }
  auto &cal = s.calibration;
  cal.fov_shift = cfg.fov_shift;
  cal.slices.assign(static_cast<std::size_t>(cfg.sms), MultiCoil(static_cast<std::size_t>(cfg.coils)));
  for (int c = 0; c < cfg.coils; ++c) {
    for (int sl = 0; sl < cfg.sms; ++sl) cal.slices[sl][c] = r.grid(cfg.height, cfg.width);
  }
  for (int sl = 0; sl < cfg.sms; ++sl) cal.shift_voxels.push_back(caipi_shift_voxels(sl, cfg.fov_shift, cfg.height));
  for (int f = 0; f < cfg.frames; ++f) {
    MultiCoil frame;
    for (int c = 0; c < cfg.coils; ++c) frame.push_back(r.grid(cfg.height, cfg.width));
    s.frames.push_back(std::move(frame));
  }
  for (int sl = 0; sl < cfg.sms; ++sl) {
    RealGrid m(cfg.height, cfg.width);
    for (Eigen::Index y = 0; y < m.rows(); ++y) {
      for (Eigen::Index x = 0; x < m.cols(); ++x) m(y, x) = r.u8() ? 1.0 : 0.0;
    }
    d.support.push_back(std::move(m));
  }
  r.finish();
  return d;
}

void write_networks(std::filesystem::path const &path, RakiBank const &bank) {
  Writer w;
  w.magic(networks_magic);
  w.u32(static_cast<std::uint32_t>(bank.sms()));
  w.u32(static_cast<std::uint32_t>(bank.coils()));
  w.f64(bank.fov_shift());
  for (int s = 0; s < bank.sms(); ++s) {
    for (int c = 0; c < bank.coils(); ++c) write_network(w, bank.at(s, c));
  }
  w.save(path);
}

RakiBank read_networks(std::filesystem::path const &path) {
  Reader r(path);
  r.magic(networks_magic);
  int const sms = static_cast<int>(r.count(r.u32(), 16, "SMS factor"));
  int const coils = static_cast<int>(r.count(r.u32(), 1024, "coil count"));
  RakiBank bank(sms, coils, r.f64());
  for (int s = 0; s < sms; ++s) {
    for (int c = 0; c < coils; ++c) bank.insert(s, c, read_network(r));
  }
  r.finish();
  return bank;
}

void write_grappa(std::filesystem::path const &path, GrappaBank const &bank) {
  Writer w;
  w.magic(grappa_magic);
  w.u32(static_cast<std::uint32_t>(bank.sms()));
  w.u32(static_cast<std::uint32_t>(bank.coils()));
  w.u32(static_cast<std::uint32_t>(bank.at(0, 0).kernel));
  w.f64(bank.fov_shift());
  for (int s = 0; s < bank.sms(); ++s) {
    for (int c = 0; c < bank.coils(); ++c) {
      auto const &k = bank.at(s, c);
      w.f64(k.lambda);
      for (Eigen::Index i = 0; i < k.weights.size(); ++i) {
        w.f64(k.weights(i).real());
        w.f64(k.weights(i).imag());
      }
    }
  }
  w.save(path);
}

GrappaBank read_grappa(std::filesystem::path const &path) {
  Reader r(path);
  r.magic(grappa_magic);
  int const sms = static_cast<int>(r.count(r.u32(), 16, "SMS factor"));
  int const coils = static_cast<int>(r.count(r.u32(), 1024, "coil count"));
  int const kernel = static_cast<int>(r.count(r.u32(), 63, "kernel size"));
  if (kernel % 2 == 0) r.fail("kernel size must be odd");
  GrappaBank bank(sms, coils, r.f64());
  for (int s = 0; s < sms; ++s) {
    for (int c = 0; c < coils; ++c) {
      GrappaKernel k;
      k.target_slice = s;
      k.target_coil = c;
      k.coils = coils;
      k.kernel = kernel;
      k.lambda = r.f64();
      k.weights.resize(Eigen::Index{coils} * kernel * kernel);
      for (Eigen::Index i = 0; i < k.weights.size(); ++i) {
        double const re = r.f64();
        k.weights(i) = Complex(re, r.f64());
      }
      bank.insert(std::move(k));
    }
  }
  r.finish();
  return bank;
}

namespace {

char const *const hyper_columns = "num_layers,filter_size,num_filters,penultimate_filters,batch_norm,dropout,split_slice";

std::string hyper_fields(Hyper const &h) {
  return std::to_string(h.num_layers) + "," + std::to_string(h.filter_size) + "," + std::to_string(h.num_filters) +
         "," + std::to_string(h.penultimate_filters) + "," + std::to_string(int(h.batch_norm)) + "," +
         std::to_string(int(h.dropout)) + "," + std::to_string(int(h.split_slice));
}

std::vector<std::string> split_line(std::string const &line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

} // namespace

std::string records_csv(std::vector<EvalRecord> const &records) {
  std::vector<int> frames;
  for (auto const &r : records) {
    if (r.status != RunStatus::Ok) continue;
    if (frames.empty()) frames = r.frames;
    if (r.frames != frames) throw FormatError("records_csv: records use different held-out frames");
  }
  std::string out = std::string("dataset_seed,") + hyper_columns + ",provenance,train_seed,status,epochs,mean_l1";
  for (int f : frames) out += ",l1_frame_" + std::to_string(f);
  out += "\n";
  for (auto const &r : records) {
    out += std::to_string(r.dataset_seed) + "," + hyper_fields(r.hyper) + "," + to_string(r.provenance()) + "," +
           std::to_string(r.train_seed) + "," + to_string(r.status) + "," + std::to_string(r.epochs) + "," +
           (r.status == RunStatus::Ok ? number(r.mean_l1) : "");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      out += ",";
      if (r.status == RunStatus::Ok) out += number(r.frame_l1[i]);
    }
    out += "\n";
  }
  return out;
}

std::vector<EvalRecord> parse_records_csv(std::string const &text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line) && (line.empty() || line[0] == '#')) {
  }
  auto const header = split_line(line);
  std::map<std::string, std::size_t> col;
  std::vector<std::pair<int, std::size_t>> frame_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    col[header[i]] = i;
    if (header[i].rfind("l1_frame_", 0) == 0) frame_cols.emplace_back(std::stoi(header[i].substr(9)), i);
  }
  for (char const *name : {"dataset_seed", "num_layers", "filter_size", "num_filters", "penultimate_filters",
                           "batch_norm", "dropout", "split_slice", "train_seed", "status", "epochs", "mean_l1"}) {
    if (!col.count(name)) throw FormatError(std::string("records csv: missing column ") + name);
  }
  std::vector<EvalRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto const f = split_line(line);
    if (f.size() != header.size()) throw FormatError("records csv: wrong field count on line " + std::to_string(line_no));
    try {
      EvalRecord r;
      r.dataset_seed = std::stoull(f[col["dataset_seed"]]);
      r.hyper.num_layers = std::stoi(f[col["num_layers"]]);
      r.hyper.filter_size = std::stoi(f[col["filter_size"]]);
      r.hyper.num_filters = std::stoi(f[col["num_filters"]]);
      r.hyper.penultimate_filters = std::stoi(f[col["penultimate_filters"]]);
      r.hyper.batch_norm = std::stoi(f[col["batch_norm"]]) != 0;
      r.hyper.dropout = std::stoi(f[col["dropout"]]) != 0;
      r.hyper.split_slice = std::stoi(f[col["split_slice"]]) != 0;
      r.train_seed = std::stoull(f[col["train_seed"]]);
      auto const &status = f[col["status"]];
      r.status = status == "ok" ? RunStatus::Ok : status == "nonfinite" ? RunStatus::NonFinite : RunStatus::Error;
      r.epochs = std::stoi(f[col["epochs"]]);
      if (r.status == RunStatus::Ok) {
        r.mean_l1 = std::stod(f[col["mean_l1"]]);
        for (auto const &[frame, i] : frame_cols) {
          r.frames.push_back(frame);
          r.frame_l1.push_back(std::stod(f[i]));
        }
      } else {
        r.mean_l1 = std::numeric_limits<double>::quiet_NaN();
      }
      records.push_back(std::move(r));
    } catch (std::logic_error const &) {
      throw FormatError("records csv: unparsable value on line " + std::to_string(line_no));
    }
  }
  return records;
}

std::string timing_csv(std::vector<EvalRecord> const &records) {
  std::string out = std::string("dataset_seed,") + hyper_columns + ",train_seed,epochs,wall_seconds\n";
  for (auto const &r : records) {
    out += std::to_string(r.dataset_seed) + "," + hyper_fields(r.hyper) + "," + std::to_string(r.train_seed) + "," +
           std::to_string(r.epochs) + "," + number(r.wall_seconds) + "\n";
  }
  return out;
}

std::string normalized_csv(std::vector<NormalizedRecord> const &records) {
  std::string out = "# percentile = 100 * (N - rank + 0.5) / N within each dataset_seed group; rank 1 = lowest "
                    "mean_l1, ties share the lower rank; failed runs have empty values\n";
  out += std::string("dataset_seed,") + hyper_columns + ",provenance,status,mean_l1,normalized_loss,rank,percentile\n";
  for (auto const &n : records) {
    auto const &r = n.record;
    bool const ok = r.status == RunStatus::Ok;
    out += std::to_string(r.dataset_seed) + "," + hyper_fields(r.hyper) + "," + to_string(r.provenance()) + "," +
           to_string(r.status) + "," + (ok ? number(r.mean_l1) : "") + "," + (ok ? number(n.normalized) : "") + "," +
           (ok ? std::to_string(n.rank) : "") + "," + (ok ? number(n.percentile) : "") + "\n";
  }
  return out;
}

std::string summary_json(std::vector<NormalizedRecord> const &records) {
  using nlohmann::ordered_json;
  auto hyper_json = [](Hyper const &h) {
    return ordered_json{{"num_layers", h.num_layers},
                        {"filter_size", h.filter_size},
                        {"num_filters", h.num_filters},
                        {"penultimate_filters", h.penultimate_filters},
                        {"batch_norm", h.batch_norm},
                        {"dropout", h.dropout},
                        {"split_slice", h.split_slice}};
  };
  auto median = [](std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    auto const n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  std::map<std::uint64_t, std::vector<NormalizedRecord const *>> groups;
  for (auto const &n : records) groups[n.record.dataset_seed].push_back(&n);

  ordered_json doc;
  doc["percentile_convention"] = "100 * (N - rank + 0.5) / N, rank 1 = lowest mean held-out L1, ties share the lower rank";
  doc["groups"] = ordered_json::array();
  for (auto const &[seed, members] : groups) {
    ordered_json g;
    g["dataset_seed"] = seed;
    g["records"] = members.size();
    std::size_t failed = 0;
    std::vector<double> norm_all, norm_split, norm_standard;
    NormalizedRecord const *best = nullptr;
    NormalizedRecord const *best_split = nullptr;
    NormalizedRecord const *best_standard = nullptr;
    for (auto const *n : members) {
      if (n->record.status != RunStatus::Ok) {
        ++failed;
        continue;
      }
      norm_all.push_back(n->normalized);
      auto &bucket = n->record.hyper.split_slice ? norm_split : norm_standard;
      auto *&b = n->record.hyper.split_slice ? best_split : best_standard;
      bucket.push_back(n->normalized);
      if (!best || n->record.mean_l1 < best->record.mean_l1) best = n;
      if (!b || n->record.mean_l1 < b->record.mean_l1) b = n;
    }
    g["failed"] = failed;
    auto entry = [&](NormalizedRecord const *n) {
      if (!n) return ordered_json(nullptr);
      return ordered_json{{"hyper", hyper_json(n->record.hyper)},
                          {"mean_l1", n->record.mean_l1},
                          {"normalized_loss", n->normalized},
                          {"percentile", n->percentile}};
    };
    g["best"] = entry(best);
    g["best_split_slice"] = entry(best_split);
    g["best_standard"] = entry(best_standard);
    auto stats = [&](std::vector<double> const &v) {
      if (v.empty()) return ordered_json(nullptr);
      return ordered_json{{"count", v.size()},
                          {"median", median(v)},
                          {"min", *std::min_element(v.begin(), v.end())},
                          {"max", *std::max_element(v.begin(), v.end())}};
    };
    g["normalized_loss"] = {{"all", stats(norm_all)}, {"split_slice", stats(norm_split)}, {"standard", stats(norm_standard)}};
    doc["groups"].push_back(std::move(g));
  }
  return doc.dump(2) + "\n";
}

void write_pgm(std::filesystem::path const &path, RealGrid const &image, double lo, double hi) {
  if (!(hi > lo)) throw ParameterError("write_pgm: need hi > lo");
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (Eigen::Index y = 0; y < image.rows(); ++y) {
    for (Eigen::Index x = 0; x < image.cols(); ++x) {
      double const v = std::clamp((image(y, x) - lo) / (hi - lo), 0.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (std::isfinite(v) ? v : 1.0)))));
    }
  }
  write_text(path, out);
}

void write_raw(std::filesystem::path const &path, RealGrid const &image) {
  Writer w;
  for (Eigen::Index y = 0; y < image.rows(); ++y) {
    for (Eigen::Index x = 0; x < image.cols(); ++x) w.f64(image(y, x));
  }
  w.save(path);
}

} // namespace raki
