#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace ota {

/// Coordinate frame a box lives in. Loss-side math runs in the normalized
/// frame, metrics in pixels.
enum class Frame { pixel, normalized };

struct ImageSize {
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

class FrameMismatch : public std::invalid_argument {
 public:
  FrameMismatch() : std::invalid_argument("box frame mismatch") {}
};

template <typename Scalar>
struct BoxXYXY {
  Scalar x1{0}, y1{0}, x2{0}, y2{0};
  Frame frame = Frame::pixel;

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return std::max(Scalar(0), width()) * std::max(Scalar(0), height()); }
  bool valid() const { return x2 >= x1 && y2 >= y1; }

  friend bool operator==(const BoxXYXY&, const BoxXYXY&) = default;
};

template <typename Scalar>
struct BoxCxCyWH {
  Scalar cx{0}, cy{0}, w{0}, h{0};
};

using Box = BoxXYXY<double>;
using BoxC = BoxCxCyWH<double>;

namespace detail {
template <typename Scalar>
void require_same_frame(const BoxXYXY<Scalar>& a, const BoxXYXY<Scalar>& b) {
  if (a.frame != b.frame) throw FrameMismatch();
}
}  // namespace detail

template <typename Scalar>
Scalar intersection_area(const BoxXYXY<Scalar>& a, const BoxXYXY<Scalar>& b) {
  const Scalar w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Scalar h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return Scalar(0);
  return w * h;
}

/// Intersection over union. Zero-area boxes give 0, never NaN.
template <typename Scalar>
Scalar iou(const BoxXYXY<Scalar>& a, const BoxXYXY<Scalar>& b) {
  detail::require_same_frame(a, b);
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  if (uni <= 0) return Scalar(0);
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

/// Generalized IoU: iou - (enclosure - union) / enclosure.
template <typename Scalar>
Scalar giou(const BoxXYXY<Scalar>& a, const BoxXYXY<Scalar>& b) {
  detail::require_same_frame(a, b);
  const Scalar inter = intersection_area(a, b);
  const Scalar uni = a.area() + b.area() - inter;
  const Scalar enclosure = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                           (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  if (enclosure <= 0) return Scalar(0);
  const Scalar overlap = uni > 0 ? inter / uni : Scalar(0);
  return std::clamp(overlap - (enclosure - uni) / enclosure, Scalar(-1), Scalar(1));
}

template <typename Scalar>
BoxXYXY<Scalar> to_normalized(const BoxXYXY<Scalar>& box, ImageSize size) {
  if (box.frame == Frame::normalized) return box;
  if (size.width <= 0 || size.height <= 0) throw std::invalid_argument("image size must be positive");
  const Scalar w = static_cast<Scalar>(size.width);
  const Scalar h = static_cast<Scalar>(size.height);
  return {box.x1 / w, box.y1 / h, box.x2 / w, box.y2 / h, Frame::normalized};
}

template <typename Scalar>
BoxXYXY<Scalar> to_pixel(const BoxXYXY<Scalar>& box, ImageSize size) {
  if (box.frame == Frame::pixel) return box;
  const Scalar w = static_cast<Scalar>(size.width);
  const Scalar h = static_cast<Scalar>(size.height);
  return {box.x1 * w, box.y1 * h, box.x2 * w, box.y2 * h, Frame::pixel};
}

template <typename Scalar>
BoxCxCyWH<Scalar> to_cxcywh(const BoxXYXY<Scalar>& box) {
  return {(box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2, box.x2 - box.x1, box.y2 - box.y1};
}

template <typename Scalar>
BoxXYXY<Scalar> to_xyxy(const BoxCxCyWH<Scalar>& box, Frame frame = Frame::normalized) {
  return {box.cx - box.w / 2, box.cy - box.h / 2, box.cx + box.w / 2, box.cy + box.h / 2, frame};
}

template <typename Scalar>
Scalar l1(const BoxCxCyWH<Scalar>& a, const BoxCxCyWH<Scalar>& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) + std::abs(a.h - b.h);
}

/// True when the box lies inside [0,width]x[0,height] (pixel frame) or the
/// unit square (normalized frame).
template <typename Scalar>
bool inside_image(const BoxXYXY<Scalar>& box, ImageSize size) {
  const Scalar w = box.frame == Frame::pixel ? static_cast<Scalar>(size.width) : Scalar(1);
  const Scalar h = box.frame == Frame::pixel ? static_cast<Scalar>(size.height) : Scalar(1);
  return box.valid() && box.x1 >= 0 && box.y1 >= 0 && box.x2 <= w && box.y2 <= h;
}

}  // namespace ota
