#pragma once

// Patch extraction/aggregation algebra and hard thresholding. Patches are
// p x p blocks fully inside the image, ordered row-major by top-left corner.
// A stacked patch is the water block flattened row-major followed by the bone
// block from the same location. Aggregation is a per-pixel ordered gather
// (covering patches summed in patch-index order), never scattered adds, so it
// is deterministic under any worker count.

#include "multra/threading.hpp"
#include "multra/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace multra {

struct PatchGrid {
  int nx = 0;
  int ny = 0;
  int count() const { return nx * ny; }
};

inline PatchGrid patch_grid(const PatchConfig& cfg, int width, int height) {
  cfg.validate();
  if (cfg.side > width || cfg.side > height)
    throw dimension_error("patch_grid: image smaller than patch side");
  return {(width - cfg.side) / cfg.stride + 1, (height - cfg.side) / cfg.stride + 1};
}

namespace detail {

inline constexpr std::int64_t kColumnChunk = 512;
inline constexpr std::int64_t kRowChunk = 16;

inline void extract_into(const ImageGrid& img, const PatchConfig& cfg,
                         const PatchGrid& grid, Eigen::MatrixXd& out, int row_offset) {
  threading::parallel_chunks(grid.count(), kColumnChunk, [&](std::int64_t jb, std::int64_t je) {
    for (std::int64_t j = jb; j < je; ++j) {
      const int kx = static_cast<int>(j) % grid.nx;
      const int ky = static_cast<int>(j) / grid.nx;
      const int x0 = kx * cfg.stride;
      const int y0 = ky * cfg.stride;
      double* col = out.col(j).data() + row_offset;
      for (int dy = 0; dy < cfg.side; ++dy) {
        const double* src = img.values.data() + static_cast<std::size_t>(y0 + dy) * img.width + x0;
        std::copy(src, src + cfg.side, col + dy * cfg.side);
      }
    }
  });
}

}  // namespace detail

// Patches of a single material image as columns of an m x N matrix.
inline Eigen::MatrixXd extract_patches(const ImageGrid& img, const PatchConfig& cfg) {
  const PatchGrid grid = patch_grid(cfg, img.width, img.height);
  Eigen::MatrixXd out(cfg.vector_size(), grid.count());
  detail::extract_into(img, cfg, grid, out, 0);
  return out;
}

// Stacked water+bone patches as columns of a 2m x N matrix.
inline Eigen::MatrixXd extract_patches(const MaterialImagePair& pair, const PatchConfig& cfg) {
  pair.validate();
  const PatchGrid grid = patch_grid(cfg, pair.width(), pair.height());
  const int m = cfg.vector_size();
  Eigen::MatrixXd out(2 * m, grid.count());
  detail::extract_into(pair.water, cfg, grid, out, 0);
  detail::extract_into(pair.bone, cfg, grid, out, m);
  return out;
}

struct PatchAggregate {
  MaterialImagePair sum;       // per-pixel sum of covering patch entries
  MaterialImagePair coverage;  // per-pixel per-material (weighted) patch counts
};

namespace detail {

// Shared gather core; weights are per patch and per material half.
inline PatchAggregate aggregate_gather(const Eigen::MatrixXd& contribs,
                                       const Eigen::VectorXd* w_water,
                                       const Eigen::VectorXd* w_bone,
                                       const PatchConfig& cfg, int width, int height) {
  const PatchGrid grid = patch_grid(cfg, width, height);
  const int m = cfg.vector_size();
  if (contribs.rows() != 2 * m)
    throw dimension_error("aggregate_patches: contribution rows != 2*side^2");
  if (contribs.cols() != grid.count())
    throw dimension_error("aggregate_patches: contribution count does not match patch grid");

  PatchAggregate agg{MaterialImagePair::zeros(width, height),
                     MaterialImagePair::zeros(width, height)};
  agg.coverage.water.unit = PixelUnit::dimensionless;
  agg.coverage.bone.unit = PixelUnit::dimensionless;

  const int side = cfg.side;
  const int stride = cfg.stride;
  // First patch index whose span [k*stride, k*stride + side) still contains
  // coordinate c: ceil((c - side + 1) / stride), clamped to the grid.
  const auto first_cover = [side, stride](int c) {
    const int a = c - side + 1;
    return a > 0 ? (a + stride - 1) / stride : 0;
  };
  threading::parallel_chunks(height, kRowChunk, [&](std::int64_t yb, std::int64_t ye) {
    for (int y = static_cast<int>(yb); y < ye; ++y) {
      const int ky0 = first_cover(y);
      const int ky1 = std::min(grid.ny - 1, y / stride);
      for (int x = 0; x < width; ++x) {
        const int kx0 = first_cover(x);
        const int kx1 = std::min(grid.nx - 1, x / stride);
        double sw = 0.0, sb = 0.0, cw = 0.0, cb = 0.0;
        for (int ky = ky0; ky <= ky1; ++ky) {
          const int dy = y - ky * stride;
          for (int kx = kx0; kx <= kx1; ++kx) {
            const int j = ky * grid.nx + kx;
            const int idx = dy * side + (x - kx * stride);
            const double ww = w_water ? (*w_water)(j) : 1.0;
            const double wb = w_bone ? (*w_bone)(j) : 1.0;
            sw += ww * contribs(idx, j);
            sb += wb * contribs(m + idx, j);
            cw += ww;
            cb += wb;
          }
        }
        agg.sum.water.at(x, y) = sw;
        agg.sum.bone.at(x, y) = sb;
        agg.coverage.water.at(x, y) = cw;
        agg.coverage.bone.at(x, y) = cb;
      }
    }
  });
  return agg;
}

}  // namespace detail

// Adjoint-style accumulation: each pixel receives the sum of the matching
// entries of all patches containing it, plus the per-material coverage count.
inline PatchAggregate aggregate_patches(const Eigen::MatrixXd& contribs,
                                        const PatchConfig& cfg, int width, int height) {
  return detail::aggregate_gather(contribs, nullptr, nullptr, cfg, width, height);
}

// Weighted variant used by the pixel-wise solvers: patch j contributes with
// weight w_water(j) on its water half and w_bone(j) on its bone half, and the
// coverage grids accumulate those weights instead of raw counts.
inline PatchAggregate aggregate_patches_weighted(const Eigen::MatrixXd& contribs,
                                                 const Eigen::VectorXd& w_water,
                                                 const Eigen::VectorXd& w_bone,
                                                 const PatchConfig& cfg, int width,
                                                 int height) {
  if (w_water.size() != contribs.cols() || w_bone.size() != contribs.cols())
    throw dimension_error("aggregate_patches_weighted: weight count mismatch");
  return detail::aggregate_gather(contribs, &w_water, &w_bone, cfg, width, height);
}

// Zeroes entries with |u_i| < gamma; entries with |u_i| == gamma are kept.
// This is the exact minimizer of ||u - z||^2 + gamma^2 ||z||_0.
inline void hard_threshold_inplace(Eigen::Ref<Eigen::VectorXd> u, double gamma) {
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (std::abs(u(i)) < gamma) u(i) = 0.0;
}

inline Eigen::VectorXd hard_threshold(Eigen::VectorXd u, double gamma) {
  hard_threshold_inplace(u, gamma);
  return u;
}

// Value of ||u - z||^2 + gamma^2 ||z||_0 at the optimal code z = H_gamma(u):
// sum_i min(u_i^2, gamma^2).
inline double sparsify_cost(const Eigen::Ref<const Eigen::VectorXd>& u, double gamma) {
  const double g2 = gamma * gamma;
  double cost = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) cost += std::min(u(i) * u(i), g2);
  return cost;
}

inline int nonzero_count(const Eigen::Ref<const Eigen::VectorXd>& z) {
  int n = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) n += (z(i) != 0.0);
  return n;
}

}  // namespace multra
