#ifndef FEMUR_ROI_HPP_
#define FEMUR_ROI_HPP_

#include <array>
#include <cmath>
#include <stdexcept>

namespace femur {

// Square region of interest. Center is normalized by image height (row) and
// width (col); the side is a fraction of min(height, width).
struct ROIParams {
  double t_r = 0.5;
  double t_c = 0.5;
  double s = 1.0;

  bool finite() const {
    return std::isfinite(t_r) && std::isfinite(t_c) && std::isfinite(s);
  }
  std::array<double, 3> as_array() const { return {t_r, t_c, s}; }
  bool operator==(const ROIParams&) const = default;
};

// Box in pixel units derived from ROIParams.
struct PixelBox {
  double center_row;
  double center_col;
  double side;

  double top() const { return center_row - side / 2; }
  double left() const { return center_col - side / 2; }
  double bottom() const { return center_row + side / 2; }
  double right() const { return center_col + side / 2; }
};

inline PixelBox to_pixels(const ROIParams& p, int height, int width) {
  const double m = height < width ? height : width;
  return {p.t_r * height, p.t_c * width, p.s * m};
}

// Manifest-level range check: center in [0, 1], side in (0, 2].
inline bool roi_in_range(const ROIParams& p) {
  return p.finite() && p.t_r >= 0.0 && p.t_r <= 1.0 && p.t_c >= 0.0 && p.t_c <= 1.0 &&
         p.s > 0.0 && p.s <= 2.0;
}

struct Click {
  double row;  // fraction of the image height
  double col;  // fraction of the image width
};

// Square box from two opposite-corner clicks: centered between them, side the
// larger of the two spans, at least 5% of min(height, width).
inline ROIParams two_click_roi(Click a, Click b, int height, int width) {
  for (const Click& c : {a, b}) {
    if (!(c.row >= 0.0 && c.row <= 1.0 && c.col >= 0.0 && c.col <= 1.0)) {
      throw std::invalid_argument("click outside the image");
    }
  }
  if (height < 1 || width < 1) throw std::invalid_argument("image dimensions must be positive");
  const double m = height < width ? height : width;
  const double span_r = std::abs(a.row - b.row) * height;
  const double span_c = std::abs(a.col - b.col) * width;
  const double side = (span_r > span_c ? span_r : span_c) / m;
  return {(a.row + b.row) / 2.0, (a.col + b.col) / 2.0, side < 0.05 ? 0.05 : side};
}

}  // namespace femur

#endif  // FEMUR_ROI_HPP_
