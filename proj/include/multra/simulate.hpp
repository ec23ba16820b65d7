#pragma once

// Synthetic phantom generation and image-domain forward simulation. Phantoms
// are rasterized deterministically from an ordered shape list (later shapes
// overwrite earlier ones; each pixel belongs to one material). The forward
// model adds seeded i.i.d. Gaussian noise per attenuation channel.

#include "multra/seeding.hpp"
#include "multra/types.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace multra {

enum class Material { water, bone };

inline std::string to_string(Material m) { return m == Material::water ? "water" : "bone"; }

inline Material material_from_string(const std::string& s) {
  if (s == "water") return Material::water;
  if (s == "bone") return Material::bone;
  throw usage_error("unknown material: " + s);
}

// Axis positions are in pixel units; rx/ry are semi-axes (ellipse) or
// half-extents (rectangle). density_jitter adds a seeded uniform offset in
// [-jitter, jitter] to the shape's density.
struct Shape {
  enum class Kind { ellipse, rectangle };

  Kind kind = Kind::ellipse;
  Material material = Material::water;
  double density = 1.0;  // g/cm^3
  double density_jitter = 0.0;
  double cx = 0.0, cy = 0.0;
  double rx = 1.0, ry = 1.0;
  double angle_deg = 0.0;
};

struct PhantomScene {
  std::vector<Shape> shapes;
};

// Water disk at 1.0 g/cm^3 with internal density features in 0.9-1.1,
// surrounded by a bone ring at 1.92 g/cm^3 with two bone insets.
inline PhantomScene default_scene(int width, int height) {
  const double scale = std::min(width, height);
  const double cx = 0.5 * width;
  const double cy = 0.5 * height;
  PhantomScene scene;
  auto ellipse = [&](Material mat, double density, double jitter, double ex, double ey,
                     double rx, double ry) {
    scene.shapes.push_back(Shape{Shape::Kind::ellipse, mat, density, jitter, cx + ex * scale,
                                 cy + ey * scale, rx * scale, ry * scale, 0.0});
  };
  ellipse(Material::bone, 1.92, 0.0, 0.0, 0.0, 0.46, 0.46);   // skull ring (outer)
  ellipse(Material::water, 1.0, 0.0, 0.0, 0.0, 0.40, 0.40);   // interior
  ellipse(Material::water, 0.90, 0.02, -0.16, -0.12, 0.11, 0.09);
  ellipse(Material::water, 1.10, 0.02, 0.15, -0.13, 0.09, 0.12);
  ellipse(Material::water, 0.95, 0.02, -0.13, 0.15, 0.08, 0.10);
  ellipse(Material::water, 1.05, 0.02, 0.14, 0.14, 0.12, 0.07);
  ellipse(Material::bone, 1.92, 0.0, 0.02, 0.01, 0.035, 0.035);
  ellipse(Material::bone, 1.92, 0.0, -0.22, 0.24, 0.025, 0.025);
  return scene;
}

// Deterministic rasterization at pixel centers (ix + 0.5, iy + 0.5). A shape
// claims the pixel for its material: the claimed channel gets the density,
// the other channel is zeroed. Out-of-bounds shapes are clipped and reported
// through `warnings` when given.
inline MaterialImagePair generate_phantom(const PhantomScene& scene, int width, int height,
                                          std::uint64_t seed,
                                          std::vector<std::string>* warnings = nullptr) {
  if (width <= 0 || height <= 0) throw dimension_error("generate_phantom: bad dimensions");
  MaterialImagePair out = MaterialImagePair::zeros(width, height);

  for (std::size_t s = 0; s < scene.shapes.size(); ++s) {
    const Shape& shape = scene.shapes[s];
    if (shape.rx <= 0.0 || shape.ry <= 0.0)
      throw numerical_error("generate_phantom: non-positive shape extent");

    double density = shape.density;
    if (shape.density_jitter != 0.0) {
      std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(s) + 0x5157ULL));
      std::uniform_real_distribution<double> offset(-shape.density_jitter, shape.density_jitter);
      density += offset(rng);
    }

    const double reach = std::max(shape.rx, shape.ry);
    if (warnings && (shape.cx - reach < 0.0 || shape.cy - reach < 0.0 ||
                     shape.cx + reach > width || shape.cy + reach > height))
      warnings->push_back("shape " + std::to_string(s) + " extends outside the image; clipped");

    const int x_lo = std::max(0, static_cast<int>(std::floor(shape.cx - reach)) - 1);
    const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(shape.cx + reach)) + 1);
    const int y_lo = std::max(0, static_cast<int>(std::floor(shape.cy - reach)) - 1);
    const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(shape.cy + reach)) + 1);

    const double rad = shape.angle_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(rad), sa = std::sin(rad);
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = (x + 0.5) - shape.cx;
        const double dy = (y + 0.5) - shape.cy;
        const double u = dx * ca + dy * sa;
        const double v = -dx * sa + dy * ca;
        bool inside = false;
        if (shape.kind == Shape::Kind::ellipse) {
          const double nu = u / shape.rx;
          const double nv = v / shape.ry;
          inside = nu * nu + nv * nv <= 1.0;
        } else {
          inside = std::abs(u) <= shape.rx && std::abs(v) <= shape.ry;
        }
        if (!inside) continue;
        if (shape.material == Material::water) {
          out.water.at(x, y) = density;
          out.bone.at(x, y) = 0.0;
        } else {
          out.bone.at(x, y) = density;
          out.water.at(x, y) = 0.0;
        }
      }
  }
  return out;
}

// y_j = A0 x_j + eps_j with independent zero-mean Gaussian noise of variance
// (sigma2_high, sigma2_low) per channel; pixel-ordered draws, seeded.
inline AttenuationPair simulate_attenuation(const MaterialImagePair& truth,
                                            const MassAttenuationMatrix& atten,
                                            const NoiseWeights& noise, std::uint64_t seed) {
  truth.validate();
  atten.validate();
  noise.validate_nonnegative();

  const double sigma_high = std::sqrt(noise.sigma2_high);
  const double sigma_low = std::sqrt(noise.sigma2_low);
  std::mt19937_64 rng(detail::mix_seed(seed, 0x6e6f697365ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);

  AttenuationPair y = AttenuationPair::zeros(truth.width(), truth.height());
  for (std::size_t j = 0; j < truth.water.size(); ++j) {
    const double w = truth.water.values[j];
    const double b = truth.bone.values[j];
    double high = atten.phi_water_high * w + atten.phi_bone_high * b;
    double low = atten.phi_water_low * w + atten.phi_bone_low * b;
    if (sigma_high > 0.0) high += sigma_high * gauss(rng);
    if (sigma_low > 0.0) low += sigma_low * gauss(rng);
    y.high.values[j] = high;
    y.low.values[j] = low;
  }
  return y;
}

}  // namespace multra
