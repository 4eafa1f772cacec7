#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>
#include <utility>

#include "edgeseg/error.hpp"
#include "edgeseg/lossmetrics.hpp"
#include "edgeseg/pnm.hpp"
#include "edgeseg/synth.hpp"

using namespace edgeseg;

namespace {

// Number of 4-connected components of a plane, by flood fill.
int components4(const BinaryPlane& p) {
  std::vector<char> seen(p.data.size(), 0);
  int count = 0;
  for (int r = 0; r < p.height; ++r)
    for (int c = 0; c < p.width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * p.width + c;
      if (!p.data[i] || seen[i]) continue;
      ++count;
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      seen[i] = 1;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int yy = y + dy[k], xx = x + dx[k];
          if (yy < 0 || yy >= p.height || xx < 0 || xx >= p.width) continue;
          const std::size_t j = static_cast<std::size_t>(yy) * p.width + xx;
          if (p.data[j] && !seen[j]) {
            seen[j] = 1;
            q.push({yy, xx});
          }
        }
      }
    }
  return count;
}

bool cup_touches_background(const LabelMask& m) {
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c) {
      if (m.at(r, c) != Label::Cup) continue;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int y = r + dr, x = c + dc;
          if (y < 0 || y >= m.height() || x < 0 || x >= m.width() || m.at(y, x) == Label::Background) return true;
        }
    }
  return false;
}

std::pair<double, double> centroid(const LabelMask& m) {
  double sy = 0, sx = 0, n = 0;
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(r, c) != Label::Background) {
        sy += r;
        sx += c;
        ++n;
      }
  return {sy / n, sx / n};
}

}  // namespace

TEST_CASE("samples are pure in seed and index") {
  SynthConfig cfg;
  cfg.seed = 9;
  const auto a = generate_sample(cfg, 3);
  const auto b = generate_sample(cfg, 3);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  CHECK_FALSE(generate_sample(cfg, 4).image == a.image);
  cfg.seed = 10;
  CHECK_FALSE(generate_sample(cfg, 3).image == a.image);

  const auto one = generate_dataset(SynthConfig{}, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].image == generate_sample(SynthConfig{}, 0).image);
  CHECK(one[0].mask == generate_sample(SynthConfig{}, 0).mask);
  CHECK(sample_id(7) == "synth_0007");
}

TEST_CASE("mask invariants over 100 samples") {
  SynthConfig cfg;
  cfg.seed = 2;
  const auto data = generate_dataset(cfg, 100);
  std::set<std::pair<double, double>> centres;
  for (const auto& s : data) {
    const auto& m = s.mask;
    CHECK(m.height() == cfg.size);
    CHECK(m.count(Label::Cup) > 0);
    CHECK(m.count(Label::Disc) > 0);
    CHECK(components4(label_plane(m, {Label::Cup})) == 1);
    CHECK(components4(label_plane(m, {Label::Disc, Label::Cup})) == 1);
    CHECK_FALSE(cup_touches_background(m));
    CHECK(std::all_of(m.labels().begin(), m.labels().end(), [](auto v) { return v <= 2; }));

    REQUIRE(s.image.channels() == 3);
    const auto px = s.image.data();
    CHECK(*std::min_element(px.begin(), px.end()) >= 0.0f);
    CHECK(*std::max_element(px.begin(), px.end()) <= 1.0f);
    centres.insert(centroid(m));
  }
  CHECK(centres.size() == 100);
}

TEST_CASE("vessels and noise leave the mask alone") {
  SynthConfig clean;
  clean.noise = 0.0;
  clean.vessel_count = {0, 0};
  SynthConfig busy = clean;
  busy.noise = 0.2;
  busy.vessel_count = {6, 6};
  // the mask depends only on geometry draws; the geometry is drawn first
  for (std::uint64_t i = 0; i < 5; ++i) CHECK(generate_sample(clean, i).mask == generate_sample(busy, i).mask);
}

TEST_CASE("cup-to-disc ratio of a circular sample") {
  SynthConfig cfg;
  cfg.cup_ratio = {0.5, 0.5};
  cfg.eccentricity = {0.0, 0.0};
  cfg.cup_offset = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto s = generate_sample(cfg, i);
    const auto disc = label_plane(s.mask, {Label::Disc, Label::Cup});
    int top = disc.height, bottom = -1;
    for (int r = 0; r < disc.height; ++r)
      for (int c = 0; c < disc.width; ++c)
        if (disc.at(r, c)) {
          top = std::min(top, r);
          bottom = std::max(bottom, r);
        }
    const double diameter = bottom - top + 1;
    const double cdr = compute_cdr(disc, label_plane(s.mask, {Label::Cup}));
    CHECK(std::abs(cdr - 0.5) <= 2.0 / diameter);
  }
}

TEST_CASE("config errors") {
  auto bad = [](auto edit) {
    SynthConfig c;
    edit(c);
    try {
      c.validate();
      return false;
    } catch (const Error& e) {
      return e.kind() == ErrorKind::ConfigError;
    }
  };
  CHECK(bad([](SynthConfig& c) { c.cup_ratio = {0.0, 0.5}; }));
  CHECK(bad([](SynthConfig& c) { c.cup_ratio = {0.5, 1.0}; }));
  CHECK(bad([](SynthConfig& c) { c.disc_radius = {20, 10}; }));
  CHECK(bad([](SynthConfig& c) { c.noise = -0.1; }));
  CHECK(bad([](SynthConfig& c) { c.eccentricity = {0.0, 1.0}; }));
  CHECK_FALSE(bad([](SynthConfig&) {}));

  // a cup ratio this close to one leaves no room inside the disc
  SynthConfig tight;
  tight.cup_ratio = {0.99, 0.99};
  tight.cup_offset = 0.9;
  bool threw = false;
  for (std::uint64_t i = 0; i < 10 && !threw; ++i) {
    try {
      generate_sample(tight, i);
    } catch (const Error& e) {
      threw = e.kind() == ErrorKind::ConfigError;
    }
  }
  CHECK(threw);

  SynthConfig huge;
  huge.size = 32;
  CHECK_THROWS_AS(generate_sample(huge, 0), Error);
  CHECK_THROWS_AS(generate_dataset(SynthConfig{}, 0), Error);
}

TEST_CASE("dataset files") {
  SynthConfig cfg;
  cfg.size = 64;
  cfg.disc_radius = {10, 14};
  cfg.center_jitter = 4;
  const auto data = generate_dataset(cfg, 3);
  const auto dir = std::filesystem::temp_directory_path() / "edgeseg_synth_test";
  std::filesystem::remove_all(dir);
  write_dataset(dir, cfg, data, LabelMapping::default_mapping());
  std::ifstream manifest(dir / "manifest.tsv");
  std::string line;
  int pairs = 0;
  while (std::getline(manifest, line))
    if (!line.empty() && line[0] != '#') ++pairs;
  CHECK(pairs == 3);
  const auto img = read_pnm(dir / (sample_id(1) + ".ppm"));
  CHECK(img.height() == 64);
  CHECK(img.channels() == 3);
  std::filesystem::remove_all(dir);
}
