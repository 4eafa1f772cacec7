#include "edgeseg/imgrid.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <sstream>

#include "edgeseg/error.hpp"

namespace edgeseg {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorKind::Precondition, what);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

int parse_int(std::string_view s, const std::string& what) {
  s = trim(s);
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorKind::ConfigError, "cannot parse " + what + " '" + std::string(s) + "'");
  return value;
}

}  // namespace

std::string_view role_name(ChannelRole role) {
  switch (role) {
    case ChannelRole::Background: return "background";
    case ChannelRole::DiscRegion: return "disc_region";
    case ChannelRole::CupRegion: return "cup_region";
    case ChannelRole::DiscEdge: return "disc_edge";
    case ChannelRole::CupEdge: return "cup_edge";
  }
  return "unknown";
}

ChannelRole role_from_name(std::string_view name) {
  for (auto role : edge_roles())
    if (role_name(role) == name) return role;
  throw Error(ErrorKind::ConfigError, "unknown channel role '" + std::string(name) + "'");
}

std::vector<ChannelRole> region_roles() {
  return {ChannelRole::Background, ChannelRole::DiscRegion, ChannelRole::CupRegion};
}

std::vector<ChannelRole> edge_roles() {
  return {ChannelRole::Background, ChannelRole::DiscRegion, ChannelRole::CupRegion,
          ChannelRole::DiscEdge, ChannelRole::CupEdge};
}

// ---------------------------------------------------------------- Image2D

Image2D::Image2D(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  require(height >= 1 && width >= 1, "image dimensions must be positive");
  require(channels == 1 || channels == 3, "image must have 1 or 3 channels");
  require(data_.size() == static_cast<std::size_t>(height) * width * channels,
          "image data length does not match dimensions");
  for (float v : data_)
    require(v >= 0.0F && v <= 1.0F, "image intensity outside [0,1]");
}

Image2D Image2D::filled(int height, int width, int channels, float value) {
  return Image2D(height, width, channels,
                 std::vector<float>(static_cast<std::size_t>(height) * width * channels, value));
}

// ---------------------------------------------------------------- LabelMask

LabelMask::LabelMask(int height, int width, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  require(height >= 1 && width >= 1, "mask dimensions must be positive");
  require(labels_.size() == static_cast<std::size_t>(height) * width,
          "mask data length does not match dimensions");
  for (auto l : labels_) require(l <= 2, "label outside {0,1,2}");
}

LabelMask LabelMask::filled(int height, int width, Label label) {
  return LabelMask(height, width,
                   std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width,
                                             static_cast<std::uint8_t>(label)));
}

std::size_t LabelMask::count(Label label) const {
  return static_cast<std::size_t>(
      std::count(labels_.begin(), labels_.end(), static_cast<std::uint8_t>(label)));
}

// ---------------------------------------------------------------- BinaryPlane

BinaryPlane::BinaryPlane(int h, int w, std::vector<std::uint8_t> values)
    : height(h), width(w), data(std::move(values)) {
  require(h >= 1 && w >= 1, "plane dimensions must be positive");
  require(data.size() == static_cast<std::size_t>(h) * w, "plane data length does not match dimensions");
  for (auto v : data) require(v <= 1, "binary plane value outside {0,1}");
}

std::size_t BinaryPlane::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------- ChannelStack

ChannelStack::ChannelStack(int height, int width, std::vector<ChannelRole> roles, std::vector<float> data)
    : height_(height), width_(width), roles_(std::move(roles)), data_(std::move(data)) {
  require(height >= 1 && width >= 1, "stack dimensions must be positive");
  require(!roles_.empty(), "stack needs at least one channel");
  std::array<bool, 5> seen{};
  for (auto r : roles_) {
    auto i = static_cast<std::size_t>(r);
    require(!seen[i], "duplicate channel role " + std::string(role_name(r)));
    seen[i] = true;
  }
  require(data_.size() == static_cast<std::size_t>(height) * width * roles_.size(),
          "stack data length does not match dimensions");
  for (float v : data_) require(v >= 0.0F && v <= 1.0F, "stack value outside [0,1]");
}

int ChannelStack::channel_of(ChannelRole role) const {
  auto it = std::find(roles_.begin(), roles_.end(), role);
  return it == roles_.end() ? -1 : static_cast<int>(it - roles_.begin());
}

BinaryPlane ChannelStack::plane(int channel, float threshold) const {
  require(channel >= 0 && channel < channels(), "channel index out of range");
  BinaryPlane out(height_, width_);
  const std::size_t c = roles_.size();
  for (std::size_t p = 0; p < out.data.size(); ++p)
    out.data[p] = data_[p * c + channel] >= threshold ? 1 : 0;
  return out;
}

bool ChannelStack::is_one_hot() const {
  const std::size_t c = roles_.size();
  for (std::size_t p = 0; p < data_.size() / c; ++p) {
    int ones = 0;
    for (std::size_t k = 0; k < c; ++k) {
      float v = data_[p * c + k];
      if (v == 1.0F) {
        ++ones;
      } else if (v != 0.0F) {
        return false;
      }
    }
    if (ones != 1) return false;
  }
  return true;
}

// ---------------------------------------------------------------- LabelMapping

LabelMapping::LabelMapping(std::vector<std::pair<int, Label>> entries)
    : entries_(std::move(entries)), lookup_(256, -1) {
  std::array<bool, 3> covered{};
  for (auto [raw, label] : entries_) {
    if (raw < 0 || raw > 255)
      throw Error(ErrorKind::ConfigError, "raw mask value " + std::to_string(raw) + " outside 0-255");
    auto id = static_cast<int>(label);
    if (id < 0 || id > 2)
      throw Error(ErrorKind::ConfigError, "class id " + std::to_string(id) + " outside {0,1,2}");
    if (lookup_[raw] != -1)
      throw Error(ErrorKind::ConfigError, "raw mask value " + std::to_string(raw) + " mapped twice");
    lookup_[raw] = id;
    covered[id] = true;
  }
  if (!(covered[0] && covered[1] && covered[2]))
    throw Error(ErrorKind::ConfigError, "label mapping must cover background, disc and cup");
}

LabelMapping LabelMapping::default_mapping() {
  return LabelMapping({{0, Label::Background}, {128, Label::Disc}, {255, Label::Cup}});
}

LabelMapping LabelMapping::parse(std::string_view text) {
  std::vector<std::pair<int, Label>> entries;
  while (!text.empty()) {
    auto comma = text.find(',');
    auto item = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (item.empty()) continue;
    auto colon = item.find(':');
    if (colon == std::string_view::npos)
      throw Error(ErrorKind::ConfigError, "mapping entry '" + std::string(item) + "' is not raw:class");
    int raw = parse_int(item.substr(0, colon), "raw mask value");
    int id = parse_int(item.substr(colon + 1), "class id");
    if (id < 0 || id > 2)
      throw Error(ErrorKind::ConfigError, "class id " + std::to_string(id) + " outside {0,1,2}");
    entries.emplace_back(raw, static_cast<Label>(id));
  }
  return LabelMapping(std::move(entries));
}

std::string LabelMapping::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (i) os << ',';
    os << entries_[i].first << ':' << static_cast<int>(entries_[i].second);
  }
  return os.str();
}

int LabelMapping::raw_for(Label label) const {
  for (auto [raw, l] : entries_)
    if (l == label) return raw;
  throw Error(ErrorKind::ConfigError, "label has no raw value in mapping");
}

// ---------------------------------------------------------------- operations

LabelMask remap_labels(const Image2D& raw, const LabelMapping& mapping) {
  require(raw.channels() == 1, "remap_labels expects a single-channel image");
  require(mapping.lookup_.size() == 256, "empty label mapping");
  std::vector<std::uint8_t> labels(raw.data().size());
  for (std::size_t p = 0; p < labels.size(); ++p) {
    int value = static_cast<int>(std::lround(raw.data()[p] * 255.0F));
    int id = mapping.lookup_[value];
    if (id < 0) throw UnmappedValueError(value, "");
    labels[p] = static_cast<std::uint8_t>(id);
  }
  return LabelMask(raw.height(), raw.width(), std::move(labels));
}

Image2D render_labels(const LabelMask& mask, const LabelMapping& mapping) {
  std::array<float, 3> value{};
  for (int id = 0; id < 3; ++id)
    value[id] = static_cast<float>(mapping.raw_for(static_cast<Label>(id))) / 255.0F;
  std::vector<float> data(mask.labels().size());
  for (std::size_t p = 0; p < data.size(); ++p) data[p] = value[mask.labels()[p]];
  return Image2D(mask.height(), mask.width(), 1, std::move(data));
}

namespace {

// Source index of output sample `dst` under pixel-centre nearest-neighbour sampling.
int nearest_source(int dst, int in, int out) {
  auto src = static_cast<int>((static_cast<std::int64_t>(2 * dst + 1) * in) / (2 * static_cast<std::int64_t>(out)));
  return std::min(src, in - 1);
}

template <typename T>
std::vector<T> resample_nearest(std::span<const T> in, int in_h, int in_w, int out_h, int out_w) {
  std::vector<T> out(static_cast<std::size_t>(out_h) * out_w);
  for (int r = 0; r < out_h; ++r) {
    int sr = nearest_source(r, in_h, out_h);
    for (int c = 0; c < out_w; ++c)
      out[static_cast<std::size_t>(r) * out_w + c] =
          in[static_cast<std::size_t>(sr) * in_w + nearest_source(c, in_w, out_w)];
  }
  return out;
}

}  // namespace

LabelMask resize_mask_nearest(const LabelMask& mask, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "output size must be at least 1x1");
  return LabelMask(out_h, out_w, resample_nearest(mask.labels(), mask.height(), mask.width(), out_h, out_w));
}

BinaryPlane resize_plane_nearest(const BinaryPlane& plane, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "output size must be at least 1x1");
  return BinaryPlane(out_h, out_w,
                     resample_nearest(std::span<const std::uint8_t>(plane.data), plane.height,
                                      plane.width, out_h, out_w));
}

Image2D resize_image_bilinear(const Image2D& img, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "output size must be at least 1x1");
  if (out_h == img.height() && out_w == img.width()) return img;

  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    for (int i = 0; i < out; ++i) {
      double src = out == 1 ? 0.5 * (in - 1) : static_cast<double>(i) * (in - 1) / (out - 1);
      int lo = std::clamp(static_cast<int>(std::floor(src)), 0, in - 1);
      int hi = std::min(lo + 1, in - 1);
      t[i] = {lo, hi, src - lo};
    }
    return t;
  };
  const auto rows = taps(img.height(), out_h);
  const auto cols = taps(img.width(), out_w);
  const int ch = img.channels();
  std::vector<float> out(static_cast<std::size_t>(out_h) * out_w * ch);
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      for (int k = 0; k < ch; ++k) {
        const auto& tr = rows[r];
        const auto& tc = cols[c];
        double top = img.at(tr.lo, tc.lo, k) * (1.0 - tc.frac) + img.at(tr.lo, tc.hi, k) * tc.frac;
        double bot = img.at(tr.hi, tc.lo, k) * (1.0 - tc.frac) + img.at(tr.hi, tc.hi, k) * tc.frac;
        double v = top * (1.0 - tr.frac) + bot * tr.frac;
        out[(static_cast<std::size_t>(r) * out_w + c) * ch + k] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return Image2D(out_h, out_w, ch, std::move(out));
}

BinaryPlane label_plane(const LabelMask& mask, std::initializer_list<Label> labels) {
  std::array<std::uint8_t, 3> on{};
  for (auto l : labels) on[static_cast<std::size_t>(l)] = 1;
  BinaryPlane out(mask.height(), mask.width());
  for (std::size_t p = 0; p < out.data.size(); ++p) out.data[p] = on[mask.labels()[p]];
  return out;
}

}  // namespace edgeseg
