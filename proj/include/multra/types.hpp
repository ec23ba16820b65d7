#pragma once

// Core value types for image-domain dual-energy CT material decomposition:
// density/attenuation image grids, the 2x2 mass attenuation model, patch
// geometry, unitary transform unions, per-patch sparse code sets, and solver
// parameter blocks. Types here carry no algorithms; validation helpers throw
// the exit-code-aligned errors below.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace multra {

// Error kinds map to process exit codes: usage 1, I/O 2, numerical 3.
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Shape/size inconsistencies between numerical inputs.
struct dimension_error : numerical_error {
  using numerical_error::numerical_error;
};

enum class PixelUnit { density_g_per_cm3, attenuation_per_cm, dimensionless };

inline std::string to_string(PixelUnit unit) {
  switch (unit) {
    case PixelUnit::density_g_per_cm3: return "density_g_per_cm3";
    case PixelUnit::attenuation_per_cm: return "attenuation_per_cm";
    case PixelUnit::dimensionless: return "dimensionless";
  }
  throw usage_error("unknown pixel unit");
}

inline PixelUnit pixel_unit_from_string(const std::string& s) {
  if (s == "density_g_per_cm3") return PixelUnit::density_g_per_cm3;
  if (s == "attenuation_per_cm") return PixelUnit::attenuation_per_cm;
  if (s == "dimensionless") return PixelUnit::dimensionless;
  throw io_error("unknown pixel unit string: " + s);
}

// Single-channel 2D image, row-major storage.
struct ImageGrid {
  int width = 0;
  int height = 0;
  PixelUnit unit = PixelUnit::dimensionless;
  std::vector<double> values;

  static ImageGrid zeros(int width, int height, PixelUnit unit) {
    ImageGrid g;
    g.width = width;
    g.height = height;
    g.unit = unit;
    g.values.assign(static_cast<std::size_t>(width) * height, 0.0);
    return g;
  }

  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }

  void validate() const {
    if (width <= 0 || height <= 0)
      throw dimension_error("ImageGrid: non-positive dimensions");
    if (values.size() != static_cast<std::size_t>(width) * height)
      throw dimension_error("ImageGrid: value count does not match width*height");
    for (double v : values)
      if (!std::isfinite(v)) throw numerical_error("ImageGrid: non-finite value");
  }
};

// Stacked water/bone density maps (the unknown x).
struct MaterialImagePair {
  ImageGrid water;
  ImageGrid bone;

  int width() const { return water.width; }
  int height() const { return water.height; }

  static MaterialImagePair zeros(int width, int height) {
    return {ImageGrid::zeros(width, height, PixelUnit::density_g_per_cm3),
            ImageGrid::zeros(width, height, PixelUnit::density_g_per_cm3)};
  }

  void validate() const {
    water.validate();
    bone.validate();
    if (water.width != bone.width || water.height != bone.height)
      throw dimension_error("MaterialImagePair: water/bone dimensions differ");
  }
};

// High/low energy attenuation maps (the measurement y).
struct AttenuationPair {
  ImageGrid high;
  ImageGrid low;

  int width() const { return high.width; }
  int height() const { return high.height; }

  static AttenuationPair zeros(int width, int height) {
    return {ImageGrid::zeros(width, height, PixelUnit::attenuation_per_cm),
            ImageGrid::zeros(width, height, PixelUnit::attenuation_per_cm)};
  }

  void validate() const {
    high.validate();
    low.validate();
    if (high.width != low.width || high.height != low.height)
      throw dimension_error("AttenuationPair: high/low dimensions differ");
  }
};

// 2x2 map from (water, bone) densities to (high, low) attenuation at a pixel:
//   [y_high]   [phi_water_high  phi_bone_high] [x_water]
//   [y_low ] = [phi_water_low   phi_bone_low ] [x_bone ]
// Entries are mass attenuation coefficients in cm^2/g.
struct MassAttenuationMatrix {
  double phi_water_high = 0.0;
  double phi_bone_high = 0.0;
  double phi_water_low = 0.0;
  double phi_bone_low = 0.0;

  Eigen::Matrix2d matrix() const {
    Eigen::Matrix2d m;
    m << phi_water_high, phi_bone_high, phi_water_low, phi_bone_low;
    return m;
  }

  double determinant() const {
    return phi_water_high * phi_bone_low - phi_bone_high * phi_water_low;
  }

  Eigen::Matrix2d inverse() const {
    const double det = determinant();
    if (std::abs(det) <= 1e-12)
      throw numerical_error("MassAttenuationMatrix: singular (|det| <= 1e-12)");
    Eigen::Matrix2d inv;
    inv << phi_bone_low, -phi_bone_high, -phi_water_low, phi_water_high;
    return inv / det;
  }

  void validate() const {
    if (!(phi_water_high > 0.0 && phi_bone_high > 0.0 && phi_water_low > 0.0 &&
          phi_bone_low > 0.0))
      throw numerical_error("MassAttenuationMatrix: entries must be strictly positive");
    if (std::abs(determinant()) <= 1e-12)
      throw numerical_error("MassAttenuationMatrix: singular (|det| <= 1e-12)");
  }
};

// Per-pixel noise variances of the attenuation channels. The statistical
// weight at a pixel is diag(sigma2_high, sigma2_low)^-1.
struct NoiseWeights {
  double sigma2_high = 0.0;
  double sigma2_low = 0.0;

  Eigen::Matrix2d weight() const {
    Eigen::Matrix2d w = Eigen::Matrix2d::Zero();
    w(0, 0) = 1.0 / sigma2_high;
    w(1, 1) = 1.0 / sigma2_low;
    return w;
  }

  void validate() const {
    if (!(sigma2_high > 0.0 && sigma2_low > 0.0))
      throw numerical_error("NoiseWeights: variances must be strictly positive");
  }

  // The simulator alone admits exactly-zero variances (noiseless data).
  void validate_nonnegative() const {
    if (sigma2_high < 0.0 || sigma2_low < 0.0)
      throw numerical_error("NoiseWeights: variances must be non-negative");
  }
};

// Square p x p patches on a fixed stride; only patches fully inside the image
// are extracted (no wrap-around), so m = side^2 per material channel.
struct PatchConfig {
  int side = 8;
  int stride = 1;

  int vector_size() const { return side * side; }

  void validate() const {
    if (side <= 0) throw dimension_error("PatchConfig: side must be positive");
    if (stride <= 0) throw dimension_error("PatchConfig: stride must be positive");
  }
};

struct UnitaryTransform {
  Eigen::MatrixXd matrix;

  int dim() const { return static_cast<int>(matrix.rows()); }

  double unitarity_defect() const {
    const Eigen::MatrixXd gram = matrix.transpose() * matrix;
    return (gram - Eigen::MatrixXd::Identity(matrix.rows(), matrix.cols()))
        .cwiseAbs()
        .maxCoeff();
  }

  bool is_unitary(double tol = 1e-10) const {
    return matrix.rows() == matrix.cols() && unitarity_defect() <= tol;
  }

  void validate() const {
    if (matrix.rows() != matrix.cols() || matrix.rows() == 0)
      throw dimension_error("UnitaryTransform: matrix must be square and non-empty");
    if (!is_unitary()) throw numerical_error("UnitaryTransform: Omega^T Omega != I");
  }
};

// Ordered collection of equal-size unitary transforms. common_2d members act
// on single-material m-vectors; cross_3d members act on stacked 2m-vectors.
struct TransformUnion {
  enum class Kind { common_2d, cross_3d };

  Kind kind = Kind::common_2d;
  std::vector<UnitaryTransform> transforms;

  int size() const { return static_cast<int>(transforms.size()); }
  int dim() const { return transforms.empty() ? 0 : transforms.front().dim(); }
  const Eigen::MatrixXd& operator[](int k) const { return transforms[k].matrix; }

  void validate() const {
    if (transforms.empty()) throw dimension_error("TransformUnion: empty union");
    const int d = transforms.front().dim();
    for (const auto& t : transforms) {
      t.validate();
      if (t.dim() != d) throw dimension_error("TransformUnion: mixed transform sizes");
    }
  }
};

inline std::string to_string(TransformUnion::Kind kind) {
  return kind == TransformUnion::Kind::common_2d ? "common_2d" : "cross_3d";
}

inline TransformUnion::Kind union_kind_from_string(const std::string& s) {
  if (s == "common_2d") return TransformUnion::Kind::common_2d;
  if (s == "cross_3d") return TransformUnion::Kind::cross_3d;
  throw io_error("unknown transform union kind: " + s);
}

// Pre-learned mixed model: a union of single-material transforms (block
// combinations of which form the common-material model) and a union of
// cross-material transforms on stacked patches. The K1 = K_common^2 block
// transforms are implicit; they are never materialized.
struct MultraModel {
  TransformUnion common;  // kind common_2d, dim m
  TransformUnion cross;   // kind cross_3d, dim 2m
  PatchConfig patch;

  void validate() const {
    common.validate();
    cross.validate();
    patch.validate();
    if (common.kind != TransformUnion::Kind::common_2d)
      throw dimension_error("MultraModel: common union has wrong kind");
    if (cross.kind != TransformUnion::Kind::cross_3d)
      throw dimension_error("MultraModel: cross union has wrong kind");
    if (cross.dim() != 2 * common.dim())
      throw dimension_error("MultraModel: cross dim must be twice common dim");
    if (common.dim() != patch.vector_size())
      throw dimension_error("MultraModel: common dim must equal side^2");
  }
};

// Model/class assignment of one patch. model 1 = common-material (independent
// block indices per material half), model 2 = cross-material.
struct PatchLabel {
  int model = 1;
  int k_water = 0;
  int k_bone = 0;
  int k_cross = 0;

  std::tuple<int, int, int> key() const {
    return model == 1 ? std::tuple<int, int, int>{1, k_water, k_bone}
                      : std::tuple<int, int, int>{2, k_cross, 0};
  }
  friend bool operator==(const PatchLabel& a, const PatchLabel& b) {
    return a.key() == b.key();
  }
  friend bool operator<(const PatchLabel& a, const PatchLabel& b) {
    return a.key() < b.key();
  }
};

// Per-patch sparse codes plus (model, class) assignments, in row-major patch
// order for the geometry they were coded at.
struct SparseCodeSet {
  PatchConfig patch;
  int image_width = 0;
  int image_height = 0;
  std::vector<PatchLabel> labels;
  Eigen::MatrixXd codes;  // 2m x n_patches, column j is z_j

  int count() const { return static_cast<int>(labels.size()); }
};

// Weights for the mixed-model regularizer. gamma1 is per material: the common
// model thresholds water and bone halves separately.
struct DecompositionParams {
  double beta1 = 50.0;
  double beta2 = 50.0;
  double gamma1_water = 0.13;
  double gamma1_bone = 0.13;
  double gamma2 = 0.09;
  int iterations = 500;

  void validate() const {
    if (!(beta1 > 0.0 && beta2 > 0.0))
      throw numerical_error("DecompositionParams: beta weights must be positive");
    if (!(gamma1_water > 0.0 && gamma1_bone > 0.0 && gamma2 > 0.0))
      throw numerical_error("DecompositionParams: thresholds must be positive");
    if (iterations <= 0)
      throw numerical_error("DecompositionParams: iterations must be positive");
  }
};

// Objective value decomposition per iteration; total is stored as the exact
// sum of its parts.
struct ObjectiveTrace {
  struct Entry {
    double total = 0.0;
    double fidelity = 0.0;
    double regularizer = 0.0;
  };

  std::vector<Entry> entries;

  void append(double fidelity, double regularizer) {
    entries.push_back({fidelity + regularizer, fidelity, regularizer});
  }
  std::size_t size() const { return entries.size(); }
};

}  // namespace multra
