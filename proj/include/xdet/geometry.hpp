#pragma once

#include <algorithm>
#include <span>
#include <vector>

namespace xdet {

/// Axis-aligned box [x1, y1, x2, y2]; origin top-left, x right, y down.
/// Area is (x2 - x1) * (y2 - y1).
template <typename Scalar>
struct Box {
  Scalar x1{};
  Scalar y1{};
  Scalar x2{};
  Scalar y2{};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return width() * height(); }
  bool non_degenerate() const { return x1 < x2 && y1 < y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

using BoundingBox = Box<double>;

template <typename Scalar>
Box<Scalar> intersect(const Box<Scalar>& a, const Box<Scalar>& b) {
  return {std::max(a.x1, b.x1), std::max(a.y1, b.y1), std::min(a.x2, b.x2),
          std::min(a.y2, b.y2)};
}

template <typename Scalar>
Scalar intersection_area(const Box<Scalar>& a, const Box<Scalar>& b) {
  const Box<Scalar> c = intersect(a, b);
  if (!c.non_degenerate()) return Scalar(0);
  return c.area();
}

/// |a ∩ b| / |a ∪ b|; 0 for disjoint boxes.
template <typename Scalar>
Scalar rect_iou(const Box<Scalar>& a, const Box<Scalar>& b) {
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  if (!(uni > Scalar(0))) return Scalar(0);
  return inter / uni;
}

/// Areas of the merged regions of two box collections.
template <typename Scalar>
struct CoverageAreas {
  Scalar intersection{};  ///< |∪pred ∩ ∪ref|
  Scalar union_{};        ///< |∪pred ∪ ∪ref|
};

/// Exact union/intersection areas by coordinate compression: the merged
/// edges split the plane into cells that are either fully inside or fully
/// outside every box.
template <typename Scalar>
CoverageAreas<Scalar> coverage_areas(std::span<const Box<Scalar>> pred,
                                     std::span<const Box<Scalar>> ref) {
  std::vector<Scalar> xs;
  std::vector<Scalar> ys;
  xs.reserve(2 * (pred.size() + ref.size()));
  ys.reserve(xs.capacity());
  for (auto boxes : {pred, ref}) {
    for (const auto& b : boxes) {
      if (!b.non_degenerate()) continue;
      xs.push_back(b.x1);
      xs.push_back(b.x2);
      ys.push_back(b.y1);
      ys.push_back(b.y2);
    }
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

  const auto covers = [](std::span<const Box<Scalar>> boxes, Scalar lo_x,
                         Scalar hi_x, Scalar lo_y, Scalar hi_y) {
    return std::any_of(boxes.begin(), boxes.end(), [&](const Box<Scalar>& b) {
      return b.non_degenerate() && b.x1 <= lo_x && hi_x <= b.x2 &&
             b.y1 <= lo_y && hi_y <= b.y2;
    });
  };

  CoverageAreas<Scalar> out;
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
    for (std::size_t j = 0; j + 1 < ys.size(); ++j) {
      const bool in_pred = covers(pred, xs[i], xs[i + 1], ys[j], ys[j + 1]);
      const bool in_ref = covers(ref, xs[i], xs[i + 1], ys[j], ys[j + 1]);
      if (!in_pred && !in_ref) continue;
      const Scalar cell = (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
      out.union_ += cell;
      if (in_pred && in_ref) out.intersection += cell;
    }
  }
  return out;
}

/// IoU between the unions of two box collections. Invariant to how either
/// region is decomposed into boxes. Empty `pred` gives 0.
template <typename Scalar>
Scalar set_iou(std::span<const Box<Scalar>> pred,
               std::span<const Box<Scalar>> ref) {
  if (pred.empty() || ref.empty()) return Scalar(0);
  const auto areas = coverage_areas(pred, ref);
  if (!(areas.union_ > Scalar(0))) return Scalar(0);
  return areas.intersection / areas.union_;
}

template <typename Scalar>
Scalar set_iou(const std::vector<Box<Scalar>>& pred,
               const std::vector<Box<Scalar>>& ref) {
  return set_iou(std::span<const Box<Scalar>>(pred),
                 std::span<const Box<Scalar>>(ref));
}

}  // namespace xdet
