#include "mtlfer/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "mtlfer/errors.hpp"

namespace mtlfer {

void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3) throw IoError("write_ppm: only 3-channel images are supported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        bytes[(y * img.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
bool next_token(std::istream& in, std::string& tok) {
  tok.clear();
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {}
      continue;
    }
    if (!std::isspace(ch)) break;
  }
  if (ch == EOF) return false;
  tok.push_back(static_cast<char>(ch));
  while ((ch = in.peek()) != EOF && !std::isspace(ch)) tok.push_back(static_cast<char>(in.get()));
  return true;
}

std::size_t parse_header_number(const std::string& tok, const std::filesystem::path& path) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw LoadError(path.string() + ": malformed PPM header field '" + tok + "'");
  }
  return static_cast<std::size_t>(std::stoul(tok));
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image " + path.string());
  std::string tok;
  if (!next_token(in, tok) || tok != "P6") throw LoadError(path.string() + ": not a binary PPM (P6)");
  std::string ws, hs, ms;
  if (!next_token(in, ws) || !next_token(in, hs) || !next_token(in, ms)) {
    throw LoadError(path.string() + ": truncated PPM header");
  }
  const std::size_t w = parse_header_number(ws, path);
  const std::size_t h = parse_header_number(hs, path);
  const std::size_t maxval = parse_header_number(ms, path);
  if (w == 0 || h == 0) throw LoadError(path.string() + ": empty PPM image");
  if (maxval != 255) throw LoadError(path.string() + ": unsupported PPM maxval " + ms);
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw LoadError(path.string() + ": truncated PPM pixel data");
  }
  Image img(3, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(bytes[(y * w + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return img;
}

}  // namespace mtlfer
