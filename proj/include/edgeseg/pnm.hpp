#pragma once

// 8-bit binary PGM (P5) and PPM (P6) I/O. Intensities map linearly 0-255 <-> [0,1].

#include <cstdint>
#include <filesystem>
#include <vector>

#include "edgeseg/imgrid.hpp"

namespace edgeseg {

/// Reads P5 (1 channel) or P6 (3 channels). Only maxval 255 is accepted.
Image2D read_pnm(const std::filesystem::path& path);

/// Writes P5 for 1-channel images, P6 for 3-channel images.
void write_pnm(const std::filesystem::path& path, const Image2D& img);

/// Raw 8-bit plane, written as P5 without any intensity scaling.
void write_pgm_bytes(const std::filesystem::path& path, int height, int width,
                     const std::vector<std::uint8_t>& bytes);

std::uint8_t quantize(float intensity);

}  // namespace edgeseg
