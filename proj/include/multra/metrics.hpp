#pragma once

// Evaluation metrics: ROI-restricted RMSE in density units and the 2D noise
// power spectrum |DFT2{f}|^2 of a zero-mean error block (unnormalized forward
// DFT, so Parseval reads sum(NPS) = N_pix * sum(f^2)).

#include "multra/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

namespace multra {

struct RoiMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> inside;

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : inside) n += (v != 0);
    return n;
  }
};

inline RoiMask full_mask(int width, int height) {
  return {width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 1)};
}

// Disk mask: pixel centers within `radius` of (cx, cy) in pixel units.
inline RoiMask disk_mask(int width, int height, double cx, double cy, double radius) {
  RoiMask mask{width, height,
               std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)};
  const double r2 = radius * radius;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double dx = (x + 0.5) - cx;
      const double dy = (y + 0.5) - cy;
      if (dx * dx + dy * dy <= r2)
        mask.inside[static_cast<std::size_t>(y) * width + x] = 1;
    }
  return mask;
}

// Centered disk covering the phantom while excluding the background corners.
inline RoiMask default_roi(int width, int height, double radius_fraction = 0.47) {
  const double radius = radius_fraction * std::min(width, height);
  return disk_mask(width, height, 0.5 * width, 0.5 * height, radius);
}

inline double rmse(const ImageGrid& estimate, const ImageGrid& truth, const RoiMask& roi) {
  if (estimate.width != truth.width || estimate.height != truth.height)
    throw dimension_error("rmse: image dimensions differ");
  if (roi.width != estimate.width || roi.height != estimate.height)
    throw dimension_error("rmse: mask dimensions differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < estimate.values.size(); ++j) {
    if (!roi.inside[j]) continue;
    const double d = estimate.values[j] - truth.values[j];
    sum += d * d;
    ++n;
  }
  if (n == 0) throw dimension_error("rmse: empty region of interest");
  return std::sqrt(sum / static_cast<double>(n));
}

// NPS of the size x size block with origin (x0, y0): subtract the block mean,
// take the unnormalized 2D DFT, return squared magnitudes.
inline Eigen::MatrixXd nps(const ImageGrid& error, int x0, int y0, int size = 30) {
  if (size <= 0) throw dimension_error("nps: block size must be positive");
  if (x0 < 0 || y0 < 0 || x0 + size > error.width || y0 + size > error.height)
    throw dimension_error("nps: block does not fit inside the image");

  Eigen::MatrixXd f(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) f(y, x) = error.at(x0 + x, y0 + y);
  f.array() -= f.mean();

  using Complex = std::complex<double>;
  Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic> twiddle(size, size);
  for (int k = 0; k < size; ++k)
    for (int j = 0; j < size; ++j) {
      const double phase = -2.0 * std::numbers::pi * k * j / size;
      twiddle(k, j) = Complex(std::cos(phase), std::sin(phase));
    }

  // separable transform: rows then columns
  const Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic> spectrum =
      twiddle * f.cast<Complex>() * twiddle.transpose();
  return spectrum.cwiseAbs2();
}

}  // namespace multra
