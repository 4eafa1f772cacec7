#include "edgeseg/encode.hpp"

#include <cmath>
#include <fstream>

#include "edgeseg/edgex.hpp"
#include "edgeseg/error.hpp"
#include "edgeseg/pnm.hpp"

namespace edgeseg {

ChannelStack one_hot_regions(const LabelMask& mask) {
  const std::size_t n = mask.labels().size();
  std::vector<float> data(n * 3, 0.0F);
  // Label ids and region channel indices coincide.
  for (std::size_t p = 0; p < n; ++p) data[p * 3 + mask.labels()[p]] = 1.0F;
  return ChannelStack(mask.height(), mask.width(), region_roles(), std::move(data));
}

ChannelStack build_edge_stack(const LabelMask& mask) {
  const auto disc_edge = edges_for_class(mask, Label::Disc, /*include_interior_classes=*/true);
  const auto cup_edge = edges_for_class(mask, Label::Cup);
  const std::size_t n = mask.labels().size();
  std::vector<float> data(n * 5, 0.0F);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t channel = mask.labels()[p];
    if (cup_edge.data[p]) {
      channel = 4;
    } else if (disc_edge.data[p]) {
      channel = 3;
    }
    data[p * 5 + channel] = 1.0F;
  }
  return ChannelStack(mask.height(), mask.width(), edge_roles(), std::move(data));
}

DecodedPrediction decode_prediction(const ChannelStack& pred) {
  const int c = pred.channels();
  const auto& roles = pred.roles();
  std::vector<std::uint8_t> in_disc(c, 0);
  std::vector<std::uint8_t> in_cup(c, 0);
  for (int k = 0; k < c; ++k) {
    in_cup[k] = roles[k] == ChannelRole::CupRegion || roles[k] == ChannelRole::CupEdge;
    in_disc[k] = roles[k] != ChannelRole::Background;
  }

  DecodedPrediction out{BinaryPlane(pred.height(), pred.width()), BinaryPlane(pred.height(), pred.width())};
  const auto data = pred.data();
  for (std::size_t p = 0; p < out.disc.data.size(); ++p) {
    const float* v = data.data() + p * c;
    double sum = 0.0;
    int best = 0;
    for (int k = 0; k < c; ++k) {
      sum += v[k];
      if (v[k] > v[best]) best = k;
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw Error(ErrorKind::MalformedPrediction,
                  "channel sum " + std::to_string(sum) + " at pixel " + std::to_string(p));
    out.disc.data[p] = in_disc[best];
    out.cup.data[p] = in_cup[best];
  }
  return out;
}

void write_stack(const std::filesystem::path& dir, const std::string& stem, const ChannelStack& stack) {
  const std::size_t n = static_cast<std::size_t>(stack.height()) * stack.width();
  std::filesystem::create_directories(dir);
  const int c = stack.channels();
  for (int k = 0; k < c; ++k) {
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t p = 0; p < n; ++p) bytes[p] = quantize(stack.data()[p * c + k]);
    write_pgm_bytes(dir / (stem + "_" + std::to_string(k) + ".pgm"), stack.height(), stack.width(), bytes);
  }
  std::ofstream roles(dir / (stem + ".roles"), std::ios::trunc);
  if (!roles) throw Error(ErrorKind::Io, "cannot write roles sidecar for " + stem);
  for (auto r : stack.roles()) roles << role_name(r) << '\n';
}

ChannelStack read_stack(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream in(dir / (stem + ".roles"));
  if (!in) throw Error(ErrorKind::Io, "missing roles sidecar for " + stem);
  std::vector<ChannelRole> roles;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) roles.push_back(role_from_name(line));
  std::vector<Image2D> planes;
  for (std::size_t k = 0; k < roles.size(); ++k)
    planes.push_back(read_pnm(dir / (stem + "_" + std::to_string(k) + ".pgm")));
  if (planes.empty()) throw Error(ErrorKind::Io, "stack " + stem + " has no channels");
  const int h = planes[0].height();
  const int w = planes[0].width();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<float> data(n * roles.size());
  for (std::size_t k = 0; k < roles.size(); ++k) {
    if (planes[k].height() != h || planes[k].width() != w || planes[k].channels() != 1)
      throw Error(ErrorKind::Io, "stack " + stem + " has inconsistent planes");
    for (std::size_t p = 0; p < n; ++p) data[p * roles.size() + k] = planes[k].data()[p];
  }
  return ChannelStack(h, w, std::move(roles), std::move(data));
}

}  // namespace edgeseg
