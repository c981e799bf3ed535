#pragma once

#include <string>
#include <vector>

#include "xdet/annotation.hpp"
#include "xdet/geometry.hpp"
#include "xdet/grammar.hpp"
#include "xdet/rng.hpp"

namespace xdet::testing {

inline int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
}

/// Integer box inside [0, limit]^2 with positive area.
inline BoundingBox random_box(Rng& rng, int width, int height) {
  const int x1 = uniform_int(rng, 0, width - 1);
  const int y1 = uniform_int(rng, 0, height - 1);
  const int x2 = uniform_int(rng, x1 + 1, width);
  const int y2 = uniform_int(rng, y1 + 1, height);
  return {double(x1), double(y1), double(x2), double(y2)};
}

inline std::vector<BoundingBox> random_boxes(Rng& rng, int limit, int min_count, int max_count) {
  std::vector<BoundingBox> out(static_cast<std::size_t>(uniform_int(rng, min_count, max_count)));
  for (auto& b : out) b = random_box(rng, limit, limit);
  return out;
}

/// Printable text without newlines or '<', trimmed, non-empty. Includes
/// brackets and colons to stress the region-line grammar.
inline std::string random_caption(Rng& rng) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ,.;:-_[]()'\"!?/&%#";
  std::string s;
  const int n = uniform_int(rng, 1, 40);
  for (int i = 0; i < n; ++i) s += alphabet[rng.uniform_index(alphabet.size())];
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "blur";
  s = s.substr(b, s.find_last_not_of(' ') - b + 1);
  return s;
}

inline TagSet random_tags(Rng& rng) {
  TagSet tags;
  for (Tag t : kAllTags) {
    if (rng.bernoulli(0.3)) tags.insert(t);
  }
  return tags;
}

inline ImageRecord random_record(Rng& rng, const std::string& id) {
  static const std::vector<std::string> generators = {"SD 1.4", "Midjourney v5", "BigGAN",
                                                      "DiT", "VAR", "FLUX.1-dev"};
  ImageRecord r;
  r.id = id;
  r.width = uniform_int(rng, 16, 1024);
  r.height = uniform_int(rng, 16, 1024);
  if (rng.bernoulli(0.5)) return r;
  r.label = Label::fake;
  r.generator = generators[rng.uniform_index(generators.size())];
  const int regions = uniform_int(rng, 0, 6);
  for (int i = 0; i < regions; ++i) {
    r.regions.push_back({random_box(rng, r.width, r.height), random_caption(rng)});
  }
  r.tags = random_tags(rng);
  return r;
}

/// Prose lines never look like region lines and carry no markers.
inline std::string random_prose(Rng& rng) {
  static const std::vector<std::string> words = {"the",   "light",  "edge", "looks", "soft",
                                                 "hand",  "odd",    "-",    "[x]",   "sky",
                                                 "plain", "shadow", ":",    "text",  "fine"};
  std::string s;
  const int lines = uniform_int(rng, 0, 3);
  for (int l = 0; l < lines; ++l) {
    if (l) s += rng.bernoulli(0.2) ? "\n\n" : "\n";
    const int n = uniform_int(rng, 1, 8);
    for (int i = 0; i < n; ++i) {
      if (i) s += ' ';
      // A leading "-" could start a region line; keep words first.
      s += i == 0 ? "note" : words[rng.uniform_index(words.size())];
    }
  }
  return s;
}

inline ParsedOutput random_parsed(Rng& rng) {
  ParsedOutput p;
  p.think_prose = random_prose(rng);
  p.verdict = rng.bernoulli(0.5) ? Verdict::real : Verdict::generated;
  const int regions = uniform_int(rng, 0, 6);
  for (int i = 0; i < regions; ++i) {
    p.regions.push_back({random_box(rng, 4096, 4096), random_caption(rng)});
  }
  p.tags = random_tags(rng);
  return p;
}

/// Cell counts of the union of each box list and of their overlap, over an
/// integer grid of the given size.
struct RasterAreas {
  long intersection = 0;
  long union_ = 0;
};

inline RasterAreas rasterize(const std::vector<BoundingBox>& a, const std::vector<BoundingBox>& b,
                             int size) {
  const auto covered = [](const std::vector<BoundingBox>& boxes, int x, int y) {
    for (const auto& box : boxes) {
      if (x >= box.x1 && x < box.x2 && y >= box.y1 && y < box.y2) return true;
    }
    return false;
  };
  RasterAreas out;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool in_a = covered(a, x, y);
      const bool in_b = covered(b, x, y);
      out.intersection += in_a && in_b;
      out.union_ += in_a || in_b;
    }
  }
  return out;
}

inline double raster_iou(const std::vector<BoundingBox>& a, const std::vector<BoundingBox>& b,
                         int size) {
  if (a.empty() || b.empty()) return 0.0;
  const auto r = rasterize(a, b, size);
  return r.union_ ? double(r.intersection) / double(r.union_) : 0.0;
}

}  // namespace xdet::testing
