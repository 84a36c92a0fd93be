#include "mtlfer/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <system_error>

#include "mtlfer/errors.hpp"

namespace mtlfer {
namespace {

struct Point {
  double x, y;
};

// Class prototypes: brow_raise, brow_slant, eye_openness, mouth_curve,
// mouth_open, mouth_width, |mouth_asym|.
struct Prototype {
  double brow_raise, brow_slant, eye_openness, mouth_curve, mouth_open, mouth_width, mouth_asym;
};

constexpr std::array<Prototype, kNumClasses> kPrototypes{{
    {-0.5, 0.9, 0.8, -0.3, 0.05, 0.85, 0.0},   // anger: brows pulled in and down
    {-0.2, 0.3, 0.55, -0.4, 0.15, 0.95, 0.9},  // disgust: squint, one lip corner raised
    {0.7, -0.6, 1.6, -0.2, 0.35, 1.1, 0.0},    // fear: wide eyes, small aperture
    {0.1, 0.0, 0.75, 1.0, 0.3, 1.2, 0.0},      // happiness: corners up
    {0.1, -0.9, 0.7, -1.0, 0.05, 0.95, 0.0},   // sadness: corners down, inner brows up
    {1.2, 0.0, 1.6, 0.0, 0.95, 0.8, 0.0},      // surprise: raised brows, open mouth
}};

double round6(double v) { return std::round(v * 1e6) / 1e6; }

Point face_point(const SyntheticFaceParams& p, double u, double v) {
  return {p.center_x + p.radius_x * u, p.center_y + p.radius_y * v};
}

// Mouth geometry in face units; s ∈ [-1, 1] runs across the mouth.
double mouth_base(const SyntheticFaceParams& p, double s) {
  const double side = p.mouth_asym >= 0 ? std::max(s, 0.0) : std::max(-s, 0.0);
  return 0.5 - 0.12 * p.mouth_curve * s * s - 0.12 * std::abs(p.mouth_asym) * side * side;
}

double aperture(const SyntheticFaceParams& p) { return 0.02 + 0.18 * p.mouth_open; }

}  // namespace

void SyntheticFaceParams::clamp_to_ranges() {
  center_x = std::clamp(center_x, 0.46, 0.54);
  center_y = std::clamp(center_y, 0.46, 0.54);
  radius_x = std::clamp(radius_x, 0.27, 0.33);
  radius_y = std::clamp(radius_y, 0.31, 0.37);
  eye_openness = std::clamp(eye_openness, 0.3, 1.8);
  brow_raise = std::clamp(brow_raise, -1.0, 1.5);
  brow_slant = std::clamp(brow_slant, -1.0, 1.0);
  mouth_curve = std::clamp(mouth_curve, -1.2, 1.2);
  mouth_open = std::clamp(mouth_open, 0.0, 1.0);
  mouth_width = std::clamp(mouth_width, 0.7, 1.3);
  mouth_asym = std::clamp(mouth_asym, -1.0, 1.0);
  skin = std::clamp(skin, 0.4, 0.9);
  background = std::clamp(background, 0.0, 0.4);
  noise = std::clamp(noise, 0.0, 0.05);
}

SyntheticFaceParams sample_face_params(std::size_t expression, Rng& rng) {
  if (expression >= kNumClasses) throw UsageError("sample_face_params: class id out of range");
  const Prototype& proto = kPrototypes[expression];
  constexpr double jitter = 0.15;
  SyntheticFaceParams p;
  p.center_x = rng.normal(0.5, 0.012);
  p.center_y = rng.normal(0.5, 0.012);
  p.radius_x = rng.normal(0.30, 0.01);
  p.radius_y = rng.normal(0.34, 0.01);
  p.brow_raise = rng.normal(proto.brow_raise, jitter);
  p.brow_slant = rng.normal(proto.brow_slant, jitter);
  p.eye_openness = rng.normal(proto.eye_openness, jitter);
  p.mouth_curve = rng.normal(proto.mouth_curve, jitter);
  p.mouth_open = rng.normal(proto.mouth_open, jitter * 0.5);
  p.mouth_width = rng.normal(proto.mouth_width, jitter * 0.5);
  const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  p.mouth_asym = side * std::abs(rng.normal(proto.mouth_asym, jitter * 0.5));
  p.skin = rng.uniform(0.55, 0.8);
  p.background = rng.uniform(0.05, 0.35);
  p.noise = 0.01;
  p.clamp_to_ranges();
  return p;
}

LandmarkSet landmarks_from_params(const SyntheticFaceParams& p) {
  std::array<Point, kNumLandmarks> pts{};
  // Jaw 0..16: lower arc of the head ellipse, dropping with the mouth.
  for (std::size_t i = 0; i < 17; ++i) {
    const double theta = (170.0 - 160.0 * static_cast<double>(i) / 16.0) * std::numbers::pi / 180.0;
    const double drop = 1.0 + 0.08 * p.mouth_open * std::sin(theta);
    pts[i] = face_point(p, 0.95 * std::cos(theta), 0.95 * std::sin(theta) * drop);
  }
  // Brows 17..21 (image-left) and 22..26 (image-right); t = 1 at the inner end.
  const double brow_v = -0.45 - 0.12 * p.brow_raise;
  for (std::size_t i = 0; i < 5; ++i) {
    const double t = static_cast<double>(i) / 4.0;
    const double arc = -0.05 * std::sin(std::numbers::pi * t);
    const double v = brow_v + arc + 0.1 * p.brow_slant * t;
    pts[17 + i] = face_point(p, -0.65 + 0.45 * t, v);
    pts[26 - i] = face_point(p, 0.65 - 0.45 * t, v);
  }
  // Nose bridge 27..30 and base 31..35.
  for (std::size_t i = 0; i < 4; ++i) pts[27 + i] = face_point(p, 0.0, -0.25 + 0.12 * static_cast<double>(i));
  for (std::size_t i = 0; i < 5; ++i) {
    const double u = -0.15 + 0.075 * static_cast<double>(i);
    pts[31 + i] = face_point(p, u, 0.2 - 0.04 * std::abs(u) / 0.15);
  }
  // Eyes 36..41 (image-left) and 42..47 (image-right).
  const double half_h = 0.06 * p.eye_openness;
  const double ev = -0.22;
  pts[36] = face_point(p, -0.52, ev);
  pts[37] = face_point(p, -0.43, ev - half_h);
  pts[38] = face_point(p, -0.33, ev - half_h);
  pts[39] = face_point(p, -0.24, ev);
  pts[40] = face_point(p, -0.33, ev + half_h);
  pts[41] = face_point(p, -0.43, ev + half_h);
  pts[42] = face_point(p, 0.24, ev);
  pts[43] = face_point(p, 0.33, ev - half_h);
  pts[44] = face_point(p, 0.43, ev - half_h);
  pts[45] = face_point(p, 0.52, ev);
  pts[46] = face_point(p, 0.43, ev + half_h);
  pts[47] = face_point(p, 0.33, ev + half_h);
  // Outer lips 48..59, clockwise from the image-left corner.
  const double W = 0.3 * p.mouth_width;
  const double A = aperture(p);
  const double lip = 0.035 + A / 2.0;
  auto outer = [&](double s, double sign) {
    return face_point(p, W * s, mouth_base(p, s) + sign * lip * (1.0 - s * s));
  };
  pts[48] = outer(-1.0, 0.0);
  for (std::size_t i = 0; i < 5; ++i) pts[49 + i] = outer(-2.0 / 3.0 + static_cast<double>(i) / 3.0, -1.0);
  pts[54] = outer(1.0, 0.0);
  for (std::size_t i = 0; i < 5; ++i) pts[55 + i] = outer(2.0 / 3.0 - static_cast<double>(i) / 3.0, 1.0);
  // Inner lips 60..67.
  auto inner = [&](double s, double sign) {
    return face_point(p, W * s, mouth_base(p, s) + sign * (A / 2.0) * (1.0 - s * s));
  };
  pts[60] = inner(-0.8, 0.0);
  pts[61] = inner(-0.4, -1.0);
  pts[62] = inner(0.0, -1.0);
  pts[63] = inner(0.4, -1.0);
  pts[64] = inner(0.8, 0.0);
  pts[65] = inner(0.4, 1.0);
  pts[66] = inner(0.0, 1.0);
  pts[67] = inner(-0.4, 1.0);

  LandmarkSet out{};
  for (std::size_t i = 0; i < kNumLandmarks; ++i) {
    out[2 * i] = round6(std::clamp(pts[i].x, 0.05, 0.95));
    out[2 * i + 1] = round6(std::clamp(pts[i].y, 0.05, 0.95));
  }
  return out;
}

namespace {

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

bool inside_polygon(Point p, const std::vector<Point>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    if ((poly[i].y > p.y) != (poly[j].y > p.y) &&
        p.x < (poly[j].x - poly[i].x) * (p.y - poly[i].y) / (poly[j].y - poly[i].y) + poly[i].x) {
      inside = !inside;
    }
  }
  return inside;
}

struct Canvas {
  Image img;
  explicit Canvas(std::size_t size) : img(3, size, size) {}

  void blend(std::size_t y, std::size_t x, std::array<double, 3> color, double alpha) {
    if (alpha <= 0.0) return;
    alpha = std::min(alpha, 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
      float& v = img.at(c, y, x);
      v = static_cast<float>((1.0 - alpha) * v + alpha * color[c]);
    }
  }

  // Pixel-space polyline with anti-aliased edges.
  void stroke(const std::vector<Point>& pts, bool closed, double width, std::array<double, 3> color) {
    const std::size_t n = img.width;
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const Point c{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
        double d = 1e9;
        const std::size_t segs = closed ? pts.size() : pts.size() - 1;
        for (std::size_t i = 0; i < segs; ++i) {
          d = std::min(d, segment_distance(c, pts[i], pts[(i + 1) % pts.size()]));
        }
        blend(y, x, color, width / 2.0 + 0.5 - d);
      }
    }
  }

  // 2×2 supersampled polygon fill.
  void fill(const std::vector<Point>& pts, std::array<double, 3> color) {
    const std::size_t n = img.width;
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        int hits = 0;
        for (double oy : {0.25, 0.75}) {
          for (double ox : {0.25, 0.75}) {
            hits += inside_polygon({static_cast<double>(x) + ox, static_cast<double>(y) + oy}, pts) ? 1 : 0;
          }
        }
        blend(y, x, color, hits / 4.0);
      }
    }
  }
};

std::vector<Point> to_pixels(const LandmarkSet& lm, std::size_t first, std::size_t last, double size) {
  std::vector<Point> pts;
  for (std::size_t i = first; i <= last; ++i) pts.push_back({lm[2 * i] * size, lm[2 * i + 1] * size});
  return pts;
}

}  // namespace

Image render_face(const SyntheticFaceParams& p, Rng& rng) {
  const double size = static_cast<double>(kImageSize);
  Canvas canvas(kImageSize);
  const std::array<double, 3> bg{p.background, p.background, p.background};
  const std::array<double, 3> skin{p.skin, 0.85 * p.skin, 0.75 * p.skin};
  const std::array<double, 3> ink{0.12, 0.1, 0.1};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < kImageSize * kImageSize; ++i) {
      canvas.img.pixels[c * kImageSize * kImageSize + i] = static_cast<float>(bg[c]);
    }
  }
  // Head ellipse with an anti-aliased rim.
  const double cx = p.center_x * size, cy = p.center_y * size;
  const double rx = p.radius_x * size, ry = p.radius_y * size;
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
      const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
      const double d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
      canvas.blend(y, x, skin, 0.5 - d);
    }
  }

  const LandmarkSet lm = landmarks_from_params(p);
  canvas.fill(to_pixels(lm, 36, 41, size), {0.92, 0.92, 0.92});
  canvas.fill(to_pixels(lm, 42, 47, size), {0.92, 0.92, 0.92});
  canvas.stroke(to_pixels(lm, 36, 41, size), true, 1.1, ink);
  canvas.stroke(to_pixels(lm, 42, 47, size), true, 1.1, ink);
  canvas.stroke(to_pixels(lm, 17, 21, size), false, 1.8, ink);
  canvas.stroke(to_pixels(lm, 22, 26, size), false, 1.8, ink);
  canvas.stroke(to_pixels(lm, 27, 30, size), false, 1.0, {0.4, 0.3, 0.3});
  canvas.stroke(to_pixels(lm, 31, 35, size), false, 1.0, {0.4, 0.3, 0.3});
  canvas.fill(to_pixels(lm, 48, 59, size), {0.7, 0.3, 0.3});
  canvas.fill(to_pixels(lm, 60, 67, size), {0.15, 0.05, 0.05});
  canvas.stroke(to_pixels(lm, 48, 59, size), true, 1.2, ink);

  for (float& v : canvas.img.pixels) {
    v = std::clamp(static_cast<float>(v + rng.normal(0.0, p.noise)), 0.0f, 1.0f);
  }
  return canvas.img;
}

std::array<std::size_t, kNumClasses> DatasetManifest::class_counts() const {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& r : records) counts[r.expression] += 1;
  return counts;
}

DatasetManifest generate_synthetic_dataset(std::size_t n, std::uint64_t seed,
                                           const std::filesystem::path& out_dir) {
  if (n == 0 || n % kNumClasses != 0) {
    throw UsageError("sample count " + std::to_string(n) + " must be a positive multiple of 6");
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  DatasetManifest m;
  m.root = out_dir;
  std::ofstream labels(out_dir / "labels.csv", std::ios::binary);
  std::ofstream lms(out_dir / "landmarks.csv", std::ios::binary);
  if (!labels || !lms) throw IoError("cannot write CSV files in " + out_dir.string());
  labels << "path,expression\n";
  lms << "path";
  for (std::size_t i = 0; i < kNumLandmarks; ++i) lms << ",x" << i << ",y" << i;
  lms << '\n';

  char name[32];
  char num[32];
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t expression = i % kNumClasses;
    Rng rng(Rng::derive(seed, "sample", i));
    Rng render_rng = rng.stream("render");
    const SyntheticFaceParams params = sample_face_params(expression, rng);
    const Image img = render_face(params, render_rng);
    const LandmarkSet lm = landmarks_from_params(params);

    std::snprintf(name, sizeof name, "images/%06zu.ppm", i);
    write_ppm(out_dir / name, img);
    labels << name << ',' << expression << '\n';
    lms << name;
    for (double v : lm) {
      std::snprintf(num, sizeof num, ",%.6f", v);
      lms << num;
    }
    lms << '\n';
    m.records.push_back({name, expression});
    m.landmarks.emplace(name, lm);
  }
  if (!labels || !lms) throw IoError("failed writing CSV files in " + out_dir.string());
  return m;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string where(const std::filesystem::path& file, std::size_t line) {
  return file.filename().string() + " row " + std::to_string(line);
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  const auto labels_path = root / "labels.csv";
  const auto lms_path = root / "landmarks.csv";
  std::ifstream labels(labels_path);
  if (!labels) throw LoadError("missing labels file " + labels_path.string());
  std::ifstream lms(lms_path);
  if (!lms) throw LoadError("missing landmarks file " + lms_path.string());

  std::string line;
  if (!std::getline(labels, line) || split_csv(line) != std::vector<std::string>{"path", "expression"}) {
    throw LoadError("labels.csv: header must be 'path,expression'");
  }
  std::set<std::string> seen;
  for (std::size_t row = 1; std::getline(labels, line); ++row) {
    if (line.empty() || line == "\r") continue;
    const auto cols = split_csv(line);
    if (cols.size() != 2) throw LoadError(where(labels_path, row) + ": expected 2 columns");
    const std::string& path = cols[0];
    if (path.empty()) throw LoadError(where(labels_path, row) + ": empty path");
    std::size_t cls = 0;
    const auto [ptr, ec] = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), cls);
    if (ec != std::errc() || ptr != cols[1].data() + cols[1].size()) {
      throw LoadError(where(labels_path, row) + ": expression '" + cols[1] + "' is not an integer");
    }
    if (cls >= kNumClasses) {
      throw LoadError(where(labels_path, row) + ": expression id " + cols[1] + " outside 0..5");
    }
    if (!seen.insert(path).second) throw LoadError(where(labels_path, row) + ": duplicate path " + path);
    m.records.push_back({path, cls});
  }

  if (!std::getline(lms, line)) throw LoadError("landmarks.csv: missing header");
  {
    const auto cols = split_csv(line);
    if (cols.size() != 1 + kLandmarkDim || cols[0] != "path") {
      throw LoadError("landmarks.csv: header must be path,x0,y0,...,x67,y67");
    }
  }
  for (std::size_t row = 1; std::getline(lms, line); ++row) {
    if (line.empty() || line == "\r") continue;
    const auto cols = split_csv(line);
    if (cols.size() != 1 + kLandmarkDim) {
      throw LoadError(where(lms_path, row) + ": expected " + std::to_string(kLandmarkDim) +
                      " landmark values, got " + std::to_string(cols.size() - 1));
    }
    LandmarkSet lm{};
    for (std::size_t j = 0; j < kLandmarkDim; ++j) {
      const std::string& s = cols[j + 1];
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
        throw LoadError(where(lms_path, row) + ": value '" + s + "' is not a number");
      }
      if (v < 0.0 || v > 1.0) {
        throw LoadError(where(lms_path, row) + ": coordinate " + s + " outside [0,1]");
      }
      lm[j] = v;
    }
    if (!m.landmarks.emplace(cols[0], lm).second) {
      throw LoadError(where(lms_path, row) + ": duplicate path " + cols[0]);
    }
  }

  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (!m.landmarks.contains(r.path)) {
      throw LoadError("labels.csv row " + std::to_string(i + 1) + ": no landmark row for " + r.path);
    }
    const Image img = read_ppm(root / r.path);
    if (img.channels != 3 || img.height != kImageSize || img.width != kImageSize) {
      throw LoadError("labels.csv row " + std::to_string(i + 1) + ": image " + r.path + " is " +
                      std::to_string(img.width) + "x" + std::to_string(img.height) + ", expected 64x64");
    }
  }
  return m;
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    Sample s;
    s.path = r.path;
    s.image = read_ppm(manifest.root / r.path);
    s.expression = r.expression;
    s.landmarks = manifest.landmarks.at(r.path);
    out.push_back(std::move(s));
  }
  return out;
}

Split split_train_val(std::span<const std::size_t> labels, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw UsageError("val_fraction must lie strictly between 0 and 1");
  }
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses) throw UsageError("split_train_val: class id out of range");
    by_class[labels[i]].push_back(i);
  }
  // Largest remainder: each class gets floor or ceil of its quota and the
  // total is round(val_fraction * N). Equal remainders are ordered by seed.
  const Rng root(seed);
  std::array<std::size_t, kNumClasses> n_val{};
  std::array<double, kNumClasses> rem{};
  std::size_t total = 0, assigned = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double q = val_fraction * static_cast<double>(by_class[c].size());
    n_val[c] = static_cast<std::size_t>(std::floor(q));
    rem[c] = q - std::floor(q);
    total += by_class[c].size();
    assigned += n_val[c];
  }
  const auto target = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(total)));
  std::vector<std::size_t> order(kNumClasses);
  std::iota(order.begin(), order.end(), 0);
  Rng tie_rng = root.stream("split-ties");
  tie_rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < target && k < order.size(); ++k) {
    if (by_class[order[k]].empty()) continue;
    n_val[order[k]] += 1;
    assigned += 1;
  }

  Split split;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (n_val[c] == 0 || n_val[c] >= idx.size()) {
      throw UsageError("class " + std::string(1, static_cast<char>('0' + c)) + " with " +
                       std::to_string(idx.size()) + " samples is too small for val_fraction " +
                       std::to_string(val_fraction));
    }
    Rng rng = root.stream("split", c);
    rng.shuffle(idx);
    const auto cut = idx.begin() + static_cast<std::ptrdiff_t>(n_val[c]);
    split.val.insert(split.val.end(), idx.begin(), cut);
    split.train.insert(split.train.end(), cut, idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

Split split_train_val(const DatasetManifest& manifest, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> labels;
  labels.reserve(manifest.records.size());
  for (const auto& r : manifest.records) labels.push_back(r.expression);
  return split_train_val(labels, val_fraction, seed);
}

}  // namespace mtlfer
