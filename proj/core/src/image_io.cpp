#include "savos/image_io.hpp"

#include <cctype>
#include <fstream>

#include "savos/common.hpp"

namespace savos {
namespace {

void skip_ws_and_comments(std::istream& in) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
}

struct PnmHeader {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
};

PnmHeader read_header(std::istream& in, const std::string& file) {
  PnmHeader hd;
  in >> hd.magic;
  skip_ws_and_comments(in);
  in >> hd.w;
  skip_ws_and_comments(in);
  in >> hd.h;
  skip_ws_and_comments(in);
  in >> hd.maxval;
  if (!in || hd.w <= 0 || hd.h <= 0 || hd.maxval != 255)
    throw FormatError("malformed PNM header in " + file);
  in.get();  // single whitespace before raster
  return hd;
}

}  // namespace

void write_pgm(const std::filesystem::path& file, const MaskU8& mask) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot open " + file.string() + " for writing");
  out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(mask.w));
  for (int y = 0; y < mask.h; ++y) {
    for (int x = 0; x < mask.w; ++x) row[x] = mask.at(y, x) ? 255 : 0;
    out.write(reinterpret_cast<const char*>(row.data()), mask.w);
  }
  if (!out) throw FormatError("short write to " + file.string());
}

MaskU8 read_pgm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  const PnmHeader hd = read_header(in, file.string());
  if (hd.magic != "P5") throw FormatError("expected P5 magic in " + file.string());
  MaskU8 mask(hd.h, hd.w);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(hd.w));
  for (int y = 0; y < hd.h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), hd.w);
    if (!in) throw FormatError("truncated raster in " + file.string());
    for (int x = 0; x < hd.w; ++x) mask.at(y, x) = row[x] ? 1 : 0;
  }
  return mask;
}

void write_ppm(const std::filesystem::path& file, const ImageRGB& img) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw FormatError("cannot open " + file.string() + " for writing");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw FormatError("short write to " + file.string());
}

ImageRGB read_ppm(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open " + file.string());
  const PnmHeader hd = read_header(in, file.string());
  if (hd.magic != "P6") throw FormatError("expected P6 magic in " + file.string());
  ImageRGB img(hd.h, hd.w);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw FormatError("truncated raster in " + file.string());
  return img;
}

}  // namespace savos
