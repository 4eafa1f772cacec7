#include "edgeseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "edgeseg/error.hpp"
#include "edgeseg/lossmetrics.hpp"
#include "edgeseg/pnm.hpp"

namespace edgeseg {

void SynthConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::ConfigError, "synth: " + what); };
  if (size < 8) fail("image size must be at least 8");
  if (!disc_radius.valid() || disc_radius.lo <= 1.0) fail("disc radius range must be ordered and > 1");
  if (!cup_ratio.valid() || !(cup_ratio.lo > 0.0) || !(cup_ratio.hi < 1.0)) fail("cup ratio range must lie in (0,1)");
  if (!eccentricity.valid() || eccentricity.lo < 0.0 || eccentricity.hi >= 1.0)
    fail("eccentricity range must lie in [0,1)");
  if (center_jitter < 0.0) fail("center jitter must be >= 0");
  if (cup_offset < 0.0 || cup_offset >= 1.0) fail("cup offset must lie in [0,1)");
  if (noise < 0.0) fail("noise amplitude must be >= 0");
  if (!vessel_count.valid() || vessel_count.lo < 0.0) fail("vessel count range must be ordered and >= 0");
}

std::string sample_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%04llu", static_cast<unsigned long long>(index));
  return buf;
}

std::string describe(const SynthConfig& cfg) {
  std::ostringstream os;
  os << "size=" << cfg.size << " disc_radius=" << format_number(cfg.disc_radius.lo) << ','
     << format_number(cfg.disc_radius.hi) << " cup_ratio=" << format_number(cfg.cup_ratio.lo) << ','
     << format_number(cfg.cup_ratio.hi) << " eccentricity=" << format_number(cfg.eccentricity.lo) << ','
     << format_number(cfg.eccentricity.hi) << " center_jitter=" << format_number(cfg.center_jitter)
     << " cup_offset=" << format_number(cfg.cup_offset) << " noise=" << format_number(cfg.noise)
     << " vessels=" << format_number(cfg.vessel_count.lo) << ',' << format_number(cfg.vessel_count.hi)
     << " seed=" << cfg.seed;
  return os.str();
}

namespace {

struct Ellipse {
  double cy, cx;  // centre (row, col)
  double a, b;    // semi-axes along the rotated x / y directions
  double theta;

  // Normalized radius: <= 1 inside.
  double rho(double y, double x) const {
    const double dy = y - cy;
    const double dx = x - cx;
    const double u = dx * std::cos(theta) + dy * std::sin(theta);
    const double v = -dx * std::sin(theta) + dy * std::cos(theta);
    return std::sqrt((u * u) / (a * a) + (v * v) / (b * b));
  }
};

double uniform(std::mt19937_64& rng, const Range& r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return uniform(rng, Range{lo, hi}); }

double smooth_step(double signed_distance, double softness) {
  return 1.0 / (1.0 + std::exp(-signed_distance / softness));
}

}  // namespace

Sample generate_sample(const SynthConfig& cfg, std::uint64_t index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x0d15cU};
  std::mt19937_64 rng(seq);
  const int s = cfg.size;
  const double half = 0.5 * (s - 1);

  // Geometry.
  const double disc_a = uniform(rng, cfg.disc_radius);
  const double ecc = uniform(rng, cfg.eccentricity);
  const double disc_b = disc_a * std::sqrt(1.0 - ecc * ecc);
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double lo = disc_a + 2.0;
  const double hi = (s - 1) - disc_a - 2.0;
  if (lo > hi) throw Error(ErrorKind::ConfigError, "synth: disc does not fit in the image");
  const double cy = std::clamp(half + uniform(rng, -cfg.center_jitter, cfg.center_jitter), lo, hi);
  const double cx = std::clamp(half + uniform(rng, -cfg.center_jitter, cfg.center_jitter), lo, hi);
  const Ellipse disc{cy, cx, disc_a, disc_b, theta};

  const double ratio = uniform(rng, cfg.cup_ratio);
  const double margin = (1.0 - ratio) * disc_b;
  const double off = cfg.cup_offset * margin * std::sqrt(uniform(rng, 0.0, 1.0));
  const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const Ellipse cup{cy + off * std::sin(dir), cx + off * std::cos(dir), ratio * disc_a, ratio * disc_b, theta};

  // Mask.
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(s) * s, 0);
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      const bool in_disc = disc.rho(r, c) <= 1.0;
      const bool in_cup = cup.rho(r, c) <= 1.0;
      if (in_cup && !in_disc) throw Error(ErrorKind::ConfigError, "synth: sampled cup leaves the disc");
      labels[static_cast<std::size_t>(r) * s + c] = in_cup ? 2 : (in_disc ? 1 : 0);
    }
  }
  LabelMask mask(s, s, labels);
  if (mask.count(Label::Cup) == 0 || mask.count(Label::Disc) == 0)
    throw Error(ErrorKind::ConfigError, "synth: sampled disc or cup rasterizes to nothing");
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      if (mask.at(r, c) != Label::Cup) continue;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= s || cc < 0 || cc >= s || mask.at(rr, cc) == Label::Background)
            throw Error(ErrorKind::ConfigError, "synth: sampled cup does not fit inside the disc");
        }
    }
  }

  // Background texture: a few low-frequency waves plus vignetting.
  std::array<std::array<double, 4>, 3> waves{};
  for (auto& w : waves) {
    w[0] = uniform(rng, 0.02, 0.08) * 2.0 * std::numbers::pi;  // frequency
    w[1] = uniform(rng, 0.0, std::numbers::pi);                 // direction
    w[2] = uniform(rng, 0.0, 2.0 * std::numbers::pi);           // phase
    w[3] = uniform(rng, 0.5, 1.0);                              // weight
  }
  const double base = uniform(rng, 0.2, 0.3);
  const double disc_gain = uniform(rng, 0.25, 0.35);
  const double cup_gain = uniform(rng, 0.15, 0.25);
  const double pallor_gain = uniform(rng, 0.5, 0.8);

  std::vector<double> intensity(static_cast<std::size_t>(s) * s);
  std::vector<double> pallor(intensity.size());  // the cup reads paler (whiter) than the rim
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      double tex = 0.0;
      for (const auto& w : waves)
        tex += w[3] * std::sin(w[0] * (c * std::cos(w[1]) + r * std::sin(w[1])) + w[2]);
      const double vignette = std::hypot(r - half, c - half) / s;
      double v = base + 0.03 * tex - 0.12 * vignette;
      v += disc_gain * smooth_step((1.0 - disc.rho(r, c)) * disc.b, 1.0);
      const double in_cup = smooth_step((1.0 - cup.rho(r, c)) * cup.b, 1.0);
      v += cup_gain * in_cup;
      intensity[static_cast<std::size_t>(r) * s + c] = v;
      pallor[static_cast<std::size_t>(r) * s + c] = in_cup;
    }
  }

  // Vessels: quadratic curves through the disc neighbourhood, stamped as
  // Gaussian-profile darkening.
  std::vector<double> shade(intensity.size(), 0.0);
  const int vessels = static_cast<int>(std::lround(uniform(rng, cfg.vessel_count)));
  for (int k = 0; k < vessels; ++k) {
    const double a0 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double a1 = a0 + std::numbers::pi + uniform(rng, -0.8, 0.8);
    const double reach = 0.75 * s;
    const std::array<double, 2> p0{cy + reach * std::sin(a0), cx + reach * std::cos(a0)};
    const std::array<double, 2> p2{cy + reach * std::sin(a1), cx + reach * std::cos(a1)};
    const std::array<double, 2> p1{cy + uniform(rng, -1.0, 1.0) * disc_a, cx + uniform(rng, -1.0, 1.0) * disc_a};
    const double width = uniform(rng, 0.8, 2.0);
    const double depth = uniform(rng, 0.35, 0.6);
    const int reach_px = static_cast<int>(std::ceil(3.0 * width));
    const int steps = 4 * s;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const double py = (1 - t) * (1 - t) * p0[0] + 2 * (1 - t) * t * p1[0] + t * t * p2[0];
      const double px = (1 - t) * (1 - t) * p0[1] + 2 * (1 - t) * t * p1[1] + t * t * p2[1];
      const int r0 = static_cast<int>(std::floor(py));
      const int c0 = static_cast<int>(std::floor(px));
      for (int r = r0 - reach_px; r <= r0 + reach_px; ++r) {
        if (r < 0 || r >= s) continue;
        for (int c = c0 - reach_px; c <= c0 + reach_px; ++c) {
          if (c < 0 || c >= s) continue;
          const double d2 = (r - py) * (r - py) + (c - px) * (c - px);
          auto& sh = shade[static_cast<std::size_t>(r) * s + c];
          sh = std::max(sh, depth * std::exp(-d2 / (width * width)));
        }
      }
    }
  }

  // Colour, noise, clamp.
  constexpr std::array<double, 3> tint{1.0, 0.62, 0.38};
  std::uniform_real_distribution<double> noise(-cfg.noise, cfg.noise);
  std::vector<float> rgb(intensity.size() * 3);
  for (std::size_t p = 0; p < intensity.size(); ++p) {
    const double v = intensity[p] * (1.0 - shade[p]);
    for (int ch = 0; ch < 3; ++ch) {
      const double n = cfg.noise > 0.0 ? noise(rng) : 0.0;
      const double t = tint[ch] + pallor_gain * pallor[p] * (1.0 - tint[ch]);
      rgb[p * 3 + ch] = static_cast<float>(std::clamp(v * t + 0.08 + n, 0.0, 1.0));
    }
  }
  return {Image2D(s, s, 3, std::move(rgb)), std::move(mask)};
}

std::vector<Sample> generate_dataset(const SynthConfig& cfg, int n) {
  if (n < 1) throw Error(ErrorKind::ConfigError, "synth: dataset size must be >= 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(cfg, static_cast<std::uint64_t>(i)));
  return out;
}

void write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg, const std::vector<Sample>& samples,
                   const LabelMapping& mapping) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv", std::ios::trunc);
  if (!manifest) throw Error(ErrorKind::Io, "cannot write " + (dir / "manifest.tsv").string());
  manifest << "# synth " << describe(cfg) << '\n';
  manifest << "# mapping " << mapping.to_string() << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto id = sample_id(i);
    write_pnm(dir / (id + ".ppm"), samples[i].image);
    write_pnm(dir / (id + "_mask.pgm"), render_labels(samples[i].mask, mapping));
    manifest << id << '\t' << id << ".ppm\t" << id << "_mask.pgm\n";
  }
}

}  // namespace edgeseg
