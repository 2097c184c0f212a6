#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bitadapt/data.hpp"

namespace bitadapt {

namespace {

struct Point {
  double x, y;
};

struct Segment {
  Point a, b;
};

double segment_distance(Point p, const Segment& s) {
  const double dx = s.b.x - s.a.x, dy = s.b.y - s.a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - s.a.x) * dx + (p.y - s.a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.a.x + t * dx - p.x, ey = s.a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

// Class prototype: 2-4 polylines of 2-3 segments in the unit square.
std::vector<Segment> class_strokes(std::uint64_t seed, std::size_t cls) {
  Rng rng(mix_seed(seed, 0x1000 + cls));
  std::vector<Segment> segs;
  const std::size_t strokes = 2 + rng.uniform_index(3);
  for (std::size_t s = 0; s < strokes; ++s) {
    Point p{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    const std::size_t pieces = 1 + rng.uniform_index(2);
    for (std::size_t k = 0; k < pieces; ++k) {
      Point q{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
      segs.push_back({p, q});
      p = q;
    }
  }
  return segs;
}

}  // namespace

LabeledDataset make_glyphs(const GlyphConfig& cfg) {
  if (cfg.num_classes == 0 || cfg.samples_per_class == 0 || cfg.image_size < 4) {
    throw std::invalid_argument("glyph generator needs classes, samples and an image size of at least 4");
  }
  if (cfg.num_classes > 256) throw std::invalid_argument("glyph generator supports at most 256 classes");
  const std::size_t side = cfg.image_size;
  LabeledDataset ds;
  ds.image_shape = {1, side, side};
  ds.pixels.reserve(cfg.num_classes * cfg.samples_per_class * side * side);
  const double j = cfg.jitter;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const auto strokes = class_strokes(cfg.seed, c);
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Rng rng(mix_seed(mix_seed(cfg.seed, 0x2000 + c), cfg.first_sample + s));
      const double angle = rng.uniform(-0.25, 0.25) * j;
      const double scale = 1.0 + rng.uniform(-0.12, 0.12) * j;
      const double shear = rng.uniform(-0.15, 0.15) * j;
      const double tx = rng.uniform(-0.07, 0.07) * j, ty = rng.uniform(-0.07, 0.07) * j;
      const double thick = rng.uniform(0.035, 0.06);
      // Forward map about the centre: p' = R * Sh * S * (p - c) + c + t.
      const double ca = std::cos(angle), sa = std::sin(angle);
      const std::array<double, 4> m{scale * ca, scale * (ca * shear - sa), scale * sa, scale * (sa * shear + ca)};
      auto map = [&](Point p) {
        const double x = p.x - 0.5, y = p.y - 0.5;
        return Point{m[0] * x + m[1] * y + 0.5 + tx, m[2] * x + m[3] * y + 0.5 + ty};
      };
      std::vector<Segment> segs;
      segs.reserve(strokes.size());
      for (const auto& seg : strokes) segs.push_back({map(seg.a), map(seg.b)});
      const double pixel = 1.0 / static_cast<double>(side);
      for (std::size_t py = 0; py < side; ++py) {
        for (std::size_t px = 0; px < side; ++px) {
          const Point p{(static_cast<double>(px) + 0.5) * pixel, (static_cast<double>(py) + 0.5) * pixel};
          double d = 1e9;
          for (const auto& seg : segs) d = std::min(d, segment_distance(p, seg));
          // One-pixel soft edge for anti-aliasing.
          double v = std::clamp(1.0 - (d - thick) / pixel, 0.0, 1.0);
          if (cfg.noise > 0.0) v = std::clamp(v + cfg.noise * rng.normal(), 0.0, 1.0);
          ds.pixels.push_back(static_cast<float>(std::lround(v * 255.0)) / 255.0f);
        }
      }
      ds.labels.push_back(static_cast<std::int64_t>(c));
    }
  }
  ds.build_index();
  return ds;
}

}  // namespace bitadapt
