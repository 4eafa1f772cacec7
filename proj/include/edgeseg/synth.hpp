#pragma once

// Deterministic fundus-like image/mask pairs: a bright elliptical disc holding
// a brighter elliptical cup on a darker textured background, optionally
// crossed by dark vessels. Vessels only touch the image, never the mask.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "edgeseg/imgrid.hpp"

namespace edgeseg {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool valid() const { return lo <= hi; }
};

struct SynthConfig {
  int size = 128;                        // square images
  Range disc_radius{16.0, 26.0};         // semi-major axis of the disc, pixels
  Range cup_ratio{0.35, 0.7};            // cup axes / disc axes
  Range eccentricity{0.0, 0.5};          // shared by disc and cup
  double center_jitter = 12.0;           // max disc-centre offset from the image centre, pixels
  double cup_offset = 0.25;              // max cup-centre offset, fraction of the free margin
  double noise = 0.06;                   // additive uniform noise amplitude
  Range vessel_count{2.0, 5.0};
  std::uint64_t seed = 1;

  void validate() const;
};

struct Sample {
  Image2D image;  // 3-channel
  LabelMask mask;
};

/// Pure in (cfg.seed, index). Throws ConfigError when the sampled cup does not
/// fit strictly inside the sampled disc.
Sample generate_sample(const SynthConfig& cfg, std::uint64_t index);

std::vector<Sample> generate_dataset(const SynthConfig& cfg, int n);

/// Zero-padded sample id, e.g. "synth_0007".
std::string sample_id(std::uint64_t index);

/// Writes {id}.ppm / {id}_mask.pgm pairs and manifest.tsv (config, then one
/// "id<TAB>image<TAB>mask" line per pair).
void write_dataset(const std::filesystem::path& dir, const SynthConfig& cfg, const std::vector<Sample>& samples,
                   const LabelMapping& mapping);

std::string describe(const SynthConfig& cfg);

}  // namespace edgeseg
