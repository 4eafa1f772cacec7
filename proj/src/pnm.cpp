#include "edgeseg/pnm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "edgeseg/error.hpp"

namespace edgeseg {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string token;
  int ch = 0;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  return token;
}

int header_int(std::istream& in, const std::filesystem::path& path) {
  auto tok = header_token(in);
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::Io, "malformed PNM header in " + path.string());
}

}  // namespace

std::uint8_t quantize(float intensity) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(intensity, 0.0F, 1.0F) * 255.0F));
}

Image2D read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  auto magic = header_token(in);
  int channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw Error(ErrorKind::Io, path.string() + " is not a binary PGM/PPM file");
  }
  int width = header_int(in, path);
  int height = header_int(in, path);
  int maxval = header_int(in, path);
  if (width < 1 || height < 1 || maxval != 255)
    throw Error(ErrorKind::Io, "unsupported PNM geometry or maxval in " + path.string());

  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw Error(ErrorKind::Io, "truncated pixel data in " + path.string());

  std::vector<float> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = static_cast<float>(bytes[i]) / 255.0F;
  return Image2D(height, width, channels, std::move(data));
}

void write_pnm(const std::filesystem::path& path, const Image2D& img) {
  std::vector<std::uint8_t> bytes(img.data().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize(img.data()[i]);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << (img.channels() == 1 ? "P5" : "P6") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void write_pgm_bytes(const std::filesystem::path& path, int height, int width,
                     const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() != static_cast<std::size_t>(height) * width)
    throw Error(ErrorKind::Precondition, "PGM byte count does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace edgeseg
