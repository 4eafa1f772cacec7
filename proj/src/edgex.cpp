#include "edgeseg/edgex.hpp"

#include "edgeseg/error.hpp"

namespace edgeseg {

ResponseGrid convolve_laplacian(const BinaryPlane& mask) {
  const int h = mask.height;
  const int w = mask.width;
  ResponseGrid out{h, w, std::vector<int>(static_cast<std::size_t>(h) * w, 0)};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int acc = 0;
      for (int i = -1; i <= 1; ++i) {
        const int rr = r + i;
        if (rr < 0 || rr >= h) continue;  // zero padding
        for (int j = -1; j <= 1; ++j) {
          const int cc = c + j;
          if (cc < 0 || cc >= w) continue;
          acc += LaplacianKernel::weights[i + 1][j + 1] * mask.at(rr, cc);
        }
      }
      out.values[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

BinaryPlane extract_edges(const BinaryPlane& mask) {
  const auto response = convolve_laplacian(mask);
  BinaryPlane out(mask.height, mask.width);
  for (std::size_t p = 0; p < out.data.size(); ++p) {
    if (mask.data[p] > 1) throw Error(ErrorKind::Precondition, "extract_edges expects a binary plane");
    if (response.values[p] != 0) out.data[p] = mask.data[p];
  }
  return out;
}

BinaryPlane edges_for_class(const LabelMask& mask, Label class_id, bool include_interior_classes) {
  if (class_id != Label::Disc && class_id != Label::Cup)
    throw Error(ErrorKind::Precondition, "edges_for_class expects the disc or cup class");
  const bool full_disc = class_id == Label::Disc && include_interior_classes;
  const auto plane = full_disc ? label_plane(mask, {Label::Disc, Label::Cup}) : label_plane(mask, {class_id});
  return extract_edges(plane);
}

}  // namespace edgeseg
