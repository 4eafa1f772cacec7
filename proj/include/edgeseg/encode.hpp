#pragma once

// One-hot re-coding of label masks and the 5-channel edge-integrated target.

#include <filesystem>
#include <string>

#include "edgeseg/imgrid.hpp"

namespace edgeseg {

/// [Background, DiscRegion, CupRegion] one-hot planes.
ChannelStack one_hot_regions(const LabelMask& mask);

/// [Background, DiscRegion, CupRegion, DiscEdge, CupEdge]. Overlaps resolve by
/// priority CupEdge > DiscEdge > CupRegion > DiscRegion > Background, so the
/// result stays one-hot.
ChannelStack build_edge_stack(const LabelMask& mask);

struct DecodedPrediction {
  BinaryPlane disc;  // full disc: disc region, cup region and both edges
  BinaryPlane cup;   // cup region and cup edge
};

/// Per-pixel argmax (ties toward the lower channel index). Throws
/// MalformedPrediction when a pixel's channel sum is off 1 by more than 1e-4.
DecodedPrediction decode_prediction(const ChannelStack& pred);

/// Writes `{stem}_{k}.pgm` for every channel plus `{stem}.roles`, one role per line.
void write_stack(const std::filesystem::path& dir, const std::string& stem, const ChannelStack& stack);
ChannelStack read_stack(const std::filesystem::path& dir, const std::string& stem);

}  // namespace edgeseg
