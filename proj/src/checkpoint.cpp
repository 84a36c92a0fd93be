#include "mtlfer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtlfer/errors.hpp"

namespace mtlfer {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw LoadError("checkpoint: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string widths_string(const BackboneConfig& b) {
  std::string s(to_string(b.variant));
  s += ':';
  for (std::size_t i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(b.widths[i]);
  return s;
}

BackboneConfig parse_backbone(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw LoadError("checkpoint: malformed backbone entry '" + s + "'");
  BackboneConfig b;
  try {
    b.variant = parse_variant(s.substr(0, colon));
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
  std::stringstream ss(s.substr(colon + 1));
  std::string item;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!std::getline(ss, item, ',')) throw LoadError("checkpoint: backbone needs 4 widths");
    b.widths[i] = std::stoul(item);
  }
  return b;
}

std::string manifest_text(const MTLNetwork<float>& model) {
  const auto& c = model.config;
  std::ostringstream os;
  os << "config emotion=" << widths_string(c.emotion) << " appearance=" << widths_string(c.appearance)
     << " input_size=" << c.input_size << " feature_dim=" << c.feature_dim << " trunk_dim=" << c.trunk_dim
     << " heads=" << c.heads << " reduction=" << c.reduction << '\n';
  for (const auto& p : model.named_parameters()) {
    os << "param " << p.name << ' ';
    const auto& shape = p.tensor.shape();
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << '\n';
  }
  return os.str();
}

ModelConfig parse_config_line(const std::string& line) {
  std::istringstream is(line);
  std::string word;
  is >> word;
  if (word != "config") throw LoadError("checkpoint: manifest must start with a config line");
  std::map<std::string, std::string> kv;
  while (is >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw LoadError("checkpoint: malformed config entry '" + word + "'");
    kv[word.substr(0, eq)] = word.substr(eq + 1);
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw LoadError(std::string("checkpoint: config line lacks '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.emotion = parse_backbone(need("emotion"));
    c.appearance = parse_backbone(need("appearance"));
    c.input_size = std::stoul(need("input_size"));
    c.feature_dim = std::stoul(need("feature_dim"));
    c.trunk_dim = std::stoul(need("trunk_dim"));
    c.heads = std::stoul(need("heads"));
    c.reduction = std::stoul(need("reduction"));
  } catch (const std::logic_error&) {
    throw LoadError("checkpoint: non-numeric value in config line");
  }
  return c;
}

}  // namespace

void write_checkpoint(std::ostream& out, const MTLNetwork<float>& model) {
  static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
  const std::string manifest = manifest_text(model);
  out.write("MTL1", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  std::vector<unsigned char> buf;
  for (const auto& p : model.named_parameters()) {
    auto v = p.tensor.values();
    buf.resize(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(v[i]);
      for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<unsigned char>(bits >> (8 * k));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("checkpoint: write failed");
}

void save_checkpoint(const std::filesystem::path& path, const MTLNetwork<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, model);
}

MTLNetwork<float> read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "MTL1", 4) != 0) throw LoadError("checkpoint: bad magic bytes");
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::uint32_t len = get_u32(in);
  std::string manifest(len, '\0');
  in.read(manifest.data(), len);
  if (static_cast<std::uint32_t>(in.gcount()) != len) throw LoadError("checkpoint: truncated manifest");

  std::istringstream lines(manifest);
  std::string line;
  if (!std::getline(lines, line)) throw LoadError("checkpoint: empty manifest");
  const ModelConfig cfg = parse_config_line(line);
  MTLNetwork<float> model;
  try {
    model = build_model<float>(cfg, 0);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
  auto params = model.named_parameters();
  std::size_t idx = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string kind, name, dims;
    is >> kind >> name >> dims;
    if (kind != "param") throw LoadError("checkpoint: unexpected manifest line '" + line + "'");
    if (idx >= params.size()) throw LoadError("checkpoint: more parameters than the architecture has");
    std::string expected;
    for (std::size_t i = 0; i < params[idx].tensor.rank(); ++i) {
      expected += (i ? "x" : "") + std::to_string(params[idx].tensor.dim(i));
    }
    if (name != params[idx].name || dims != expected) {
      throw LoadError("checkpoint: manifest entry '" + name + " " + dims + "' does not match '" +
                      params[idx].name + " " + expected + "'");
    }
    ++idx;
  }
  if (idx != params.size()) throw LoadError("checkpoint: manifest lists too few parameters");

  std::vector<unsigned char> buf;
  for (auto& p : params) {
    auto v = p.tensor.values();
    buf.resize(v.size() * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
      throw LoadError("checkpoint: truncated data for " + p.name);
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[i * 4 + k]) << (8 * k);
      v[i] = std::bit_cast<float>(bits);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw LoadError("checkpoint: trailing bytes after parameter data");
  return model;
}

MTLNetwork<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace mtlfer
