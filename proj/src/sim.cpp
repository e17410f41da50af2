#include "raki/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "raki/fft.hpp"

namespace raki {

namespace {

constexpr double pi = std::numbers::pi;

void require_grid(Eigen::Index h, Eigen::Index w) {
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw DimensionError("simulator grids must be powers of two, got " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
}

double smoothstep(double edge0, double edge1, double v) {
  double const t = std::clamp((v - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Ellipse {
  double cy, cx, ay, ax, angle, value;

  // Soft indicator: 1 inside, 0 outside, a ~1 voxel ramp across the edge.
  double weight(double y, double x) const {
    double const dy = y - cy, dx = x - cx;
    double const c = std::cos(angle), s = std::sin(angle);
    double const u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay;
    double const rho = std::sqrt(u * u + v * v);
    double const soft = 1.0 / std::min(ax, ay);
    return 1.0 - smoothstep(1.0 - soft, 1.0 + soft, rho);
  }
};

} // namespace

std::vector<RealGrid> make_phantom(Eigen::Index height, Eigen::Index width, int slice_count, Rng &rng) {
  if (slice_count < 1) throw ParameterError("make_phantom: slice_count must be >= 1");
  require_grid(height, width);
  double const h = static_cast<double>(height), w = static_cast<double>(width);

  std::vector<RealGrid> slices;
  for (int s = 0; s < slice_count; ++s) {
    std::vector<Ellipse> parts;
    Ellipse const head{h / 2 + rng.uniform(-0.05, 0.05) * h, w / 2 + rng.uniform(-0.05, 0.05) * w,
                       rng.uniform(0.30, 0.42) * h,          rng.uniform(0.26, 0.38) * w,
                       rng.uniform(-0.3, 0.3),               rng.uniform(0.45, 0.7)};
    parts.push_back(head);
    int const inner = 3 + static_cast<int>(rng.below(4));
    for (int e = 0; e < inner; ++e) {
      double const r = std::sqrt(rng.uniform()) * 0.55, t = rng.uniform(0.0, 2 * pi);
      parts.push_back({head.cy + r * head.ay * std::sin(t), head.cx + r * head.ax * std::cos(t),
                       rng.uniform(0.08, 0.3) * head.ay, rng.uniform(0.08, 0.3) * head.ax, rng.uniform(0.0, pi),
                       rng.uniform(-0.35, 0.35)});
    }
    RealGrid img(height, width);
    for (Eigen::Index y = 0; y < height; ++y) {
      for (Eigen::Index x = 0; x < width; ++x) {
        double const yy = static_cast<double>(y), xx = static_cast<double>(x);
        double const inside = parts[0].weight(yy, xx);
        double v = parts[0].value;
        for (std::size_t e = 1; e < parts.size(); ++e) v += parts[e].value * parts[e].weight(yy, xx);
        img(y, x) = inside * std::clamp(v, 0.1, 1.0);
      }
    }
    slices.push_back(std::move(img));
  }
  return slices;
}

std::vector<CoilProfile> make_coils(Eigen::Index height, Eigen::Index width, int coil_count, Rng &rng) {
  if (coil_count < 2) throw ParameterError("make_coils: at least 2 coils are required for unaliasing");
  require_grid(height, width);
  double const h = static_cast<double>(height), w = static_cast<double>(width);

  std::vector<CoilProfile> coils;
  for (int c = 0; c < coil_count; ++c) {
    double const theta = 2 * pi * (c + rng.uniform(-0.3, 0.3)) / coil_count;
    double const cy = h / 2 + 0.55 * h * std::sin(theta), cx = w / 2 + 0.55 * w * std::cos(theta);
    double const sigma = rng.uniform(0.35, 0.5) * std::max(h, w);
    double const phase0 = rng.uniform(-pi, pi);
    double const gy = rng.uniform(-pi / 2, pi / 2), gx = rng.uniform(-pi / 2, pi / 2);

    CoilProfile p{c, CxGrid(height, width)};
    for (Eigen::Index y = 0; y < height; ++y) {
      for (Eigen::Index x = 0; x < width; ++x) {
        double const dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        double const mag = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
        double const ph = phase0 + gy * (static_cast<double>(y) / h - 0.5) + gx * (static_cast<double>(x) / w - 0.5);
        p.sensitivity(y, x) = std::polar(mag, ph);
      }
    }
    p.sensitivity /= p.sensitivity.abs().maxCoeff();
    coils.push_back(std::move(p));
  }
  return coils;
}

MultiCoil encode_slice(RealGrid const &image, std::vector<CoilProfile> const &coils) {
  MultiCoil out;
  out.reserve(coils.size());
  for (auto const &c : coils) {
    if (c.sensitivity.rows() != image.rows() || c.sensitivity.cols() != image.cols()) {
      throw ShapeError("encode_slice: coil sensitivity and image grids differ");
    }
    out.push_back(fft2c(CxGrid(c.sensitivity * image.cast<Complex>())));
  }
  return out;
}

double caipi_shift_voxels(int slice_index, double fov_shift, Eigen::Index n) {
  return static_cast<double>(slice_index) * fov_shift * static_cast<double>(n);
}

CxGrid apply_phase_ramp(CxGrid const &ks, double delta) {
  auto const n = ks.rows();
  CxGrid out = ks;
  for (Eigen::Index ky = 0; ky < n; ++ky) {
    double const k = static_cast<double>(ky - n / 2);
    out.row(ky) *= std::polar(1.0, -2.0 * pi * k * delta / static_cast<double>(n));
  }
  return out;
}

CxGrid apply_caipi_shift(CxGrid const &ks, int slice_index, double fov_shift) {
  return apply_phase_ramp(ks, caipi_shift_voxels(slice_index, fov_shift, ks.rows()));
}

MultiCoil apply_caipi_shift(MultiCoil const &ks, int slice_index, double fov_shift) {
  MultiCoil out;
  out.reserve(ks.size());
  for (auto const &g : ks) out.push_back(apply_caipi_shift(g, slice_index, fov_shift));
  return out;
}

MultiCoil undo_caipi_shift(MultiCoil const &ks, int slice_index, double fov_shift) {
  MultiCoil out;
  out.reserve(ks.size());
  for (auto const &g : ks) out.push_back(apply_phase_ramp(g, -caipi_shift_voxels(slice_index, fov_shift, g.rows())));
  return out;
}

SlicePacket make_packet(std::vector<MultiCoil> const &unshifted, double fov_shift) {
  if (unshifted.empty()) throw ShapeError("make_packet: no slices");
  SlicePacket p;
  p.fov_shift = fov_shift;
  for (std::size_t s = 0; s < unshifted.size(); ++s) {
    if (unshifted[s].size() != unshifted[0].size()) throw ShapeError("make_packet: coil counts differ");
    auto const si = static_cast<int>(s);
    p.slices.push_back(apply_caipi_shift(unshifted[s], si, fov_shift));
    p.shift_voxels.push_back(caipi_shift_voxels(si, fov_shift, unshifted[s].at(0).rows()));
  }
  return p;
}

MultiCoil alias_subset(SlicePacket const &packet, std::uint32_t mask) {
  if (packet.slices.empty()) throw ShapeError("sms_alias: empty packet");
  auto const coils = packet.slices[0].size();
  auto const h = packet.height(), w = packet.width();
  MultiCoil out(coils, CxGrid::Zero(h, w));
  for (std::size_t s = 0; s < packet.slices.size(); ++s) {
    auto const &slice = packet.slices[s];
    if (slice.size() != coils) throw ShapeError("sms_alias: slices differ in coil count");
    if (!(mask >> s & 1u)) continue;
    for (std::size_t c = 0; c < coils; ++c) {
      if (slice[c].rows() != h || slice[c].cols() != w) throw ShapeError("sms_alias: slices differ in grid size");
      out[c] += slice[c];
    }
  }
  return out;
}

MultiCoil sms_alias(SlicePacket const &packet) {
  auto const n = packet.slices.size();
  return alias_subset(packet, n >= 32 ? ~0u : ((1u << n) - 1u));
}

MultiCoil SimTimeseries::truth(int frame, int slice) const {
  MultiCoil out = calibration.slices.at(static_cast<std::size_t>(slice));
  double const f = factors.at(static_cast<std::size_t>(frame)).at(static_cast<std::size_t>(slice));
  for (auto &g : out) g *= f;
  return out;
}

namespace {
void add_noise(MultiCoil &ks, double sigma, Rng &rng) {
  // Complex white noise with E|n|^2 = sigma^2.
  double const component = sigma / std::sqrt(2.0);
  for (auto &g : ks) {
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      double const re = rng.normal(), im = rng.normal();
      g(i) += Complex(component * re, component * im);
    }
  }
}
} // namespace

SimTimeseries make_timeseries(SlicePacket const &packet, int frames, double amplitude, double noise_sigma, Rng &rng,
                              bool calibration_noise) {
  if (frames < 2) throw ParameterError("make_timeseries: at least 2 frames are required");
  if (amplitude < 0.0 || amplitude >= 1.0) throw ParameterError("make_timeseries: amplitude must be in [0, 1)");
  if (noise_sigma < 0.0) throw ParameterError("make_timeseries: noise sigma must be >= 0");

  SimTimeseries ts;
  ts.calibration = packet;
  ts.amplitude = amplitude;
  ts.noise_sigma = noise_sigma;
  auto const n = packet.sms();

  // Slow sinusoidal drift per slice, bounded by [1 - a, 1 + a].
  std::vector<double> phase(static_cast<std::size_t>(n)), rate(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    phase[static_cast<std::size_t>(s)] = rng.uniform(0.0, 2 * pi);
    rate[static_cast<std::size_t>(s)] = rng.uniform(0.5, 2.0);
  }
  for (int f = 0; f < frames; ++f) {
    std::vector<double> fac(static_cast<std::size_t>(n), 1.0);
    if (f > 0) {
      for (int s = 0; s < n; ++s) {
        auto const si = static_cast<std::size_t>(s);
        fac[si] = 1.0 + amplitude * std::sin(phase[si] + 2 * pi * rate[si] * f / frames);
      }
    }
    SlicePacket scaled = packet;
    for (int s = 0; s < n; ++s) {
      for (auto &g : scaled.slices[static_cast<std::size_t>(s)]) g *= fac[static_cast<std::size_t>(s)];
    }
    MultiCoil frame = sms_alias(scaled);
    if (noise_sigma > 0.0) add_noise(frame, noise_sigma, rng);
    ts.frames.push_back(std::move(frame));
    ts.factors.push_back(std::move(fac));
  }
  if (calibration_noise && noise_sigma > 0.0) {
    for (auto &slice : ts.calibration.slices) add_noise(slice, noise_sigma, rng);
  }
  return ts;
}

RealGrid rss(MultiCoil const &images) {
  if (images.empty()) throw ShapeError("rss: no coils");
  RealGrid acc = RealGrid::Zero(images[0].rows(), images[0].cols());
  for (auto const &g : images) {
    if (g.rows() != acc.rows() || g.cols() != acc.cols()) throw ShapeError("rss: coil grids differ");
    acc += g.abs2();
  }
  return acc.sqrt();
}

Dataset simulate(SimConfig const &config, std::uint64_t seed) {
  if (config.sms < 1) throw ParameterError("simulate: sms factor must be >= 1");
  Rng rng(seed);
  auto const phantom = make_phantom(config.height, config.width, config.sms, rng);
  auto const coils = make_coils(config.height, config.width, config.coils, rng);
  std::vector<MultiCoil> unshifted;
  for (auto const &img : phantom) unshifted.push_back(encode_slice(img, coils));

  Dataset d;
  d.config = config;
  d.seed = seed;
  d.series = make_timeseries(make_packet(unshifted, config.effective_fov_shift()), config.frames, config.amplitude,
                             config.noise_sigma, rng, config.calibration_noise);
  for (auto const &img : phantom) d.support.push_back((img > 0.05).cast<double>());
  return d;
}

} // namespace raki
