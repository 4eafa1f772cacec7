#pragma once

// Raster data model shared by the whole pipeline. All rasters are row-major
// with the origin at the top-left; multi-channel data is channel-last.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace edgeseg {

enum class Label : std::uint8_t { Background = 0, Disc = 1, Cup = 2 };

enum class ChannelRole : std::uint8_t { Background = 0, DiscRegion, CupRegion, DiscEdge, CupEdge };

std::string_view role_name(ChannelRole role);
ChannelRole role_from_name(std::string_view name);

/// Roles of a region-only target: [Background, DiscRegion, CupRegion].
std::vector<ChannelRole> region_roles();
/// Roles of the edge-integrated target: region roles followed by [DiscEdge, CupEdge].
std::vector<ChannelRole> edge_roles();

/// Intensity image with values in [0,1], 1 or 3 interleaved channels.
class Image2D {
 public:
  Image2D() = default;
  Image2D(int height, int width, int channels, std::vector<float> data);
  static Image2D filled(int height, int width, int channels, float value);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::span<const float> data() const noexcept { return data_; }
  float at(int row, int col, int channel = 0) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + channel];
  }

  friend bool operator==(const Image2D&, const Image2D&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<float> data_;
};

/// Per-pixel class ids in {0,1,2}.
class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(int height, int width, std::vector<std::uint8_t> labels);
  static LabelMask filled(int height, int width, Label label);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::span<const std::uint8_t> labels() const noexcept { return labels_; }
  Label at(int row, int col) const {
    return static_cast<Label>(labels_[static_cast<std::size_t>(row) * width_ + col]);
  }
  std::size_t count(Label label) const;

  friend bool operator==(const LabelMask&, const LabelMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> labels_;
};

/// A single {0,1} plane: one channel of a target, a decoded prediction, an edge map.
struct BinaryPlane {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryPlane() = default;
  BinaryPlane(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
  BinaryPlane(int h, int w, std::vector<std::uint8_t> values);

  std::uint8_t at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  std::size_t count() const;
  bool empty_foreground() const { return count() == 0; }

  friend bool operator==(const BinaryPlane&, const BinaryPlane&) = default;
};

/// H×W×C per-class planes; channel-last. Targets are one-hot, predictions are
/// probabilities.
class ChannelStack {
 public:
  ChannelStack() = default;
  ChannelStack(int height, int width, std::vector<ChannelRole> roles, std::vector<float> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return static_cast<int>(roles_.size()); }
  const std::vector<ChannelRole>& roles() const noexcept { return roles_; }
  std::span<const float> data() const noexcept { return data_; }
  float at(int row, int col, int channel) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * roles_.size() + channel];
  }
  /// Index of `role` in roles(), or -1.
  int channel_of(ChannelRole role) const;
  BinaryPlane plane(int channel, float threshold = 0.5F) const;
  /// True when every pixel has exactly one channel equal to 1 and the rest 0.
  bool is_one_hot() const;

  friend bool operator==(const ChannelStack&, const ChannelStack&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<ChannelRole> roles_;
  std::vector<float> data_;
};

/// Raw 8-bit grey value -> class id table for external mask encodings.
class LabelMapping {
 public:
  LabelMapping() = default;
  explicit LabelMapping(std::vector<std::pair<int, Label>> entries);

  /// 0 -> background, 128 -> disc, 255 -> cup.
  static LabelMapping default_mapping();
  /// Parses "0:0,128:1,255:2".
  static LabelMapping parse(std::string_view text);
  std::string to_string() const;

  const std::vector<std::pair<int, Label>>& entries() const noexcept { return entries_; }
  /// Raw value for `label` (first matching entry).
  int raw_for(Label label) const;

 private:
  std::vector<std::pair<int, Label>> entries_;
  std::vector<int> lookup_;  // 256 entries, -1 for unmapped
  friend LabelMask remap_labels(const Image2D&, const LabelMapping&);
};

/// Maps a single-channel image (intensities v, raw value round(255 v)) to labels.
/// Throws UnmappedValueError on the first raw value absent from `mapping`.
LabelMask remap_labels(const Image2D& raw, const LabelMapping& mapping);

/// Inverse of remap_labels: renders labels back to raw grey values.
Image2D render_labels(const LabelMask& mask, const LabelMapping& mapping);

LabelMask resize_mask_nearest(const LabelMask& mask, int out_h, int out_w);
BinaryPlane resize_plane_nearest(const BinaryPlane& plane, int out_h, int out_w);

/// Bilinear resampling with align-corners sampling (corner pixels map to corner pixels).
Image2D resize_image_bilinear(const Image2D& img, int out_h, int out_w);

/// Foreground plane of the given label(s).
BinaryPlane label_plane(const LabelMask& mask, std::initializer_list<Label> labels);

}  // namespace edgeseg
