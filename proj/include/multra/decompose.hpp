#pragma once

// Penalized weighted least squares solvers for image-domain dual-energy CT
// material decomposition. The data term couples the two materials only
// through the 2x2 mass attenuation matrix at each pixel, and the unitary
// transform regularizers reduce to diagonal patch-coverage terms, so every
// image update is an exact per-pixel 2x2 solve. All solvers alternate that
// update with closed-form sparse coding/clustering, which makes the objective
// non-increasing at every half-step.

#include "multra/learning.hpp"
#include "multra/patches.hpp"
#include "multra/threading.hpp"
#include "multra/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace multra {

// Fixed per-scan context: attenuation model, noise weights, patch geometry.
struct DecompositionSystem {
  MassAttenuationMatrix atten;
  NoiseWeights noise;
  PatchConfig patch;
  int width = 0;
  int height = 0;

  void validate() const {
    atten.validate();
    noise.validate();
    patch.validate();
    if (width <= 0 || height <= 0)
      throw dimension_error("DecompositionSystem: non-positive image dimensions");
    if (patch.side > width || patch.side > height)
      throw dimension_error("DecompositionSystem: patch side exceeds image size");
  }
};

// Unregularized decomposition: x_j = A0^-1 y_j at every pixel. For an
// invertible 2x2 system this coincides with the weighted least squares
// solution.
inline MaterialImagePair direct_inversion(const AttenuationPair& y,
                                          const MassAttenuationMatrix& atten) {
  y.validate();
  const Eigen::Matrix2d inv = atten.inverse();
  MaterialImagePair x = MaterialImagePair::zeros(y.width(), y.height());
  const std::int64_t n = static_cast<std::int64_t>(y.high.size());
  threading::parallel_chunks(n, 1 << 14, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t j = b; j < e; ++j) {
      const double h = y.high.values[static_cast<std::size_t>(j)];
      const double l = y.low.values[static_cast<std::size_t>(j)];
      x.water.values[static_cast<std::size_t>(j)] = inv(0, 0) * h + inv(0, 1) * l;
      x.bone.values[static_cast<std::size_t>(j)] = inv(1, 0) * h + inv(1, 1) * l;
    }
  });
  return x;
}

namespace detail {

// Model-agnostic view of one coding step. backproj column j holds
// Omega^T z_j; the weights apply per material half, and pen holds the
// x-independent penalty gamma^2 * ||z_half||_0 for each half.
struct CodedPatches {
  Eigen::MatrixXd backproj;
  Eigen::VectorXd w_water, w_bone;
  Eigen::VectorXd pen_water, pen_bone;

  Eigen::Index count() const { return backproj.cols(); }
};

inline double fidelity_term(const MaterialImagePair& x, const AttenuationPair& y,
                            const DecompositionSystem& system) {
  const Eigen::Matrix2d a0 = system.atten.matrix();
  const double wh = 1.0 / system.noise.sigma2_high;
  const double wl = 1.0 / system.noise.sigma2_low;
  double total = 0.0;
  for (std::size_t j = 0; j < x.water.size(); ++j) {
    const double rh = y.high.values[j] - (a0(0, 0) * x.water.values[j] + a0(0, 1) * x.bone.values[j]);
    const double rl = y.low.values[j] - (a0(1, 0) * x.water.values[j] + a0(1, 1) * x.bone.values[j]);
    total += wh * rh * rh + wl * rl * rl;
  }
  return 0.5 * total;
}

inline double regularizer_term(const MaterialImagePair& x, const CodedPatches& coded,
                               const PatchConfig& cfg) {
  if (coded.count() == 0) return 0.0;
  const Eigen::MatrixXd patches = extract_patches(x, cfg);
  if (patches.cols() != coded.count())
    throw dimension_error("objective: code count does not match patch geometry");
  const int m = cfg.vector_size();
  double total = 0.0;
  for (Eigen::Index j = 0; j < coded.count(); ++j) {
    // Unitarity turns ||Omega P x - z||^2 into ||P x - Omega^T z||^2.
    const double sperr_w = (patches.col(j).head(m) - coded.backproj.col(j).head(m)).squaredNorm();
    const double sperr_b = (patches.col(j).tail(m) - coded.backproj.col(j).tail(m)).squaredNorm();
    total += coded.w_water(j) * (sperr_w + coded.pen_water(j)) +
             coded.w_bone(j) * (sperr_b + coded.pen_bone(j));
  }
  return total;
}

inline ObjectiveTrace::Entry objective_entry(const MaterialImagePair& x,
                                             const AttenuationPair& y,
                                             const CodedPatches& coded,
                                             const DecompositionSystem& system) {
  const double fid = fidelity_term(x, y, system);
  const double reg = regularizer_term(x, coded, system.patch);
  return {fid + reg, fid, reg};
}

// Exact minimizer of the quadratic image subproblem: per pixel j,
//   (A0^T W A0 + 2 diag(c_j)) x_j = A0^T W y_j + 2 b_j,
// with c the beta-weighted coverage counts and b the beta-weighted
// aggregation of the back-projected codes.
inline MaterialImagePair image_update_core(const AttenuationPair& y, const CodedPatches& coded,
                                           const DecompositionSystem& system) {
  const int width = system.width;
  const int height = system.height;
  MaterialImagePair b = MaterialImagePair::zeros(width, height);
  MaterialImagePair c = MaterialImagePair::zeros(width, height);
  if (coded.count() > 0) {
    PatchAggregate agg = aggregate_patches_weighted(coded.backproj, coded.w_water,
                                                    coded.w_bone, system.patch, width, height);
    b = std::move(agg.sum);
    c = std::move(agg.coverage);
  }

  const Eigen::Matrix2d a0 = system.atten.matrix();
  const Eigen::Matrix2d atw = a0.transpose() * system.noise.weight();
  const Eigen::Matrix2d atwa = atw * a0;

  MaterialImagePair x = MaterialImagePair::zeros(width, height);
  const std::int64_t n = static_cast<std::int64_t>(width) * height;
  threading::parallel_chunks(n, 1 << 14, [&](std::int64_t jb, std::int64_t je) {
    for (std::int64_t j = jb; j < je; ++j) {
      const std::size_t s = static_cast<std::size_t>(j);
      const double h00 = atwa(0, 0) + 2.0 * c.water.values[s];
      const double h01 = atwa(0, 1);
      const double h10 = atwa(1, 0);
      const double h11 = atwa(1, 1) + 2.0 * c.bone.values[s];
      const double det = h00 * h11 - h01 * h10;
      if (!(std::abs(det) > 1e-300))
        throw numerical_error("image update: singular per-pixel Hessian");
      const double rhs0 = atw(0, 0) * y.high.values[s] + atw(0, 1) * y.low.values[s] +
                          2.0 * b.water.values[s];
      const double rhs1 = atw(1, 0) * y.high.values[s] + atw(1, 1) * y.low.values[s] +
                          2.0 * b.bone.values[s];
      x.water.values[s] = (h11 * rhs0 - h01 * rhs1) / det;
      x.bone.values[s] = (h00 * rhs1 - h10 * rhs0) / det;
    }
  });
  return x;
}

inline void check_code_geometry(const SparseCodeSet& codes, const DecompositionSystem& system) {
  if (codes.count() == 0) return;  // degenerate: nothing aggregates
  const PatchGrid grid = patch_grid(system.patch, system.width, system.height);
  if (codes.count() != grid.count() || codes.image_width != system.width ||
      codes.image_height != system.height || codes.patch.side != system.patch.side ||
      codes.patch.stride != system.patch.stride)
    throw dimension_error("sparse codes are inconsistent with the patch geometry");
  if (codes.codes.rows() != 2 * system.patch.vector_size() ||
      codes.codes.cols() != codes.count())
    throw dimension_error("sparse code matrix has wrong shape");
}

// Mixed-model weights: beta_1 applies to both halves of a common-model patch,
// beta_2 to both halves of a cross-model patch.
inline CodedPatches build_coded_multra(const SparseCodeSet& codes, const MultraModel& model,
                                       const DecompositionParams& params) {
  const int m = model.common.dim();
  const Eigen::Index n = codes.count();
  CodedPatches coded;
  coded.backproj.resize(2 * m, n);
  coded.w_water.resize(n);
  coded.w_bone.resize(n);
  coded.pen_water.resize(n);
  coded.pen_bone.resize(n);

  const double g1w2 = params.gamma1_water * params.gamma1_water;
  const double g1b2 = params.gamma1_bone * params.gamma1_bone;
  const double g22 = params.gamma2 * params.gamma2;

  threading::parallel_chunks(n, kColumnChunk, [&](std::int64_t jb, std::int64_t je) {
    for (std::int64_t j = jb; j < je; ++j) {
      const PatchLabel& label = codes.labels[static_cast<std::size_t>(j)];
      const auto z = codes.codes.col(j);
      if (label.model == 1) {
        if (label.k_water < 0 || label.k_water >= model.common.size() || label.k_bone < 0 ||
            label.k_bone >= model.common.size())
          throw dimension_error("sparse codes: common class index out of range");
        coded.backproj.col(j).head(m).noalias() =
            model.common[label.k_water].transpose() * z.head(m);
        coded.backproj.col(j).tail(m).noalias() =
            model.common[label.k_bone].transpose() * z.tail(m);
        coded.w_water(j) = params.beta1;
        coded.w_bone(j) = params.beta1;
        coded.pen_water(j) = g1w2 * nonzero_count(z.head(m));
        coded.pen_bone(j) = g1b2 * nonzero_count(z.tail(m));
      } else if (label.model == 2) {
        if (label.k_cross < 0 || label.k_cross >= model.cross.size())
          throw dimension_error("sparse codes: cross class index out of range");
        coded.backproj.col(j).noalias() = model.cross[label.k_cross].transpose() * z;
        coded.w_water(j) = params.beta2;
        coded.w_bone(j) = params.beta2;
        coded.pen_water(j) = g22 * nonzero_count(z.head(m));
        coded.pen_bone(j) = g22 * nonzero_count(z.tail(m));
      } else {
        throw dimension_error("sparse codes: unknown model id");
      }
    }
  });
  return coded;
}

}  // namespace detail

// Exact solution of the joint sparse coding and clustering subproblem. The
// common-model candidate picks the best transform per material half
// independently (the block cost separates); the cross-model candidate scans
// the cross union. Ties prefer the common model, then the lowest indices.
inline SparseCodeSet sparse_code_and_cluster(const MaterialImagePair& x,
                                             const MultraModel& model,
                                             const DecompositionParams& params) {
  model.validate();
  params.validate();
  const Eigen::MatrixXd patches = extract_patches(x, model.patch);
  const int m = model.common.dim();
  const Eigen::Index n = patches.cols();

  SparseCodeSet out;
  out.patch = model.patch;
  out.image_width = x.width();
  out.image_height = x.height();
  out.labels.assign(static_cast<std::size_t>(n), PatchLabel{});
  out.codes.resize(2 * m, n);

  threading::parallel_chunks(n, detail::kColumnChunk, [&](std::int64_t cb, std::int64_t ce) {
    const Eigen::Index len = ce - cb;
    const auto qw = patches.middleRows(0, m).middleCols(cb, len);
    const auto qb = patches.middleRows(m, m).middleCols(cb, len);

    Eigen::MatrixXd best_w(m, len), best_b(m, len), best_x(2 * m, len);
    Eigen::VectorXd cost_w = Eigen::VectorXd::Constant(len, std::numeric_limits<double>::infinity());
    Eigen::VectorXd cost_b = cost_w, cost_x = cost_w;
    std::vector<int> kw(static_cast<std::size_t>(len), 0), kb(kw), kx(kw);

    for (int k = 0; k < model.common.size(); ++k) {
      const Eigen::MatrixXd tw = model.common[k] * qw;
      const Eigen::MatrixXd tb = model.common[k] * qb;
      for (Eigen::Index i = 0; i < len; ++i) {
        const double cw = sparsify_cost(tw.col(i), params.gamma1_water);
        if (cw < cost_w(i)) {
          cost_w(i) = cw;
          kw[static_cast<std::size_t>(i)] = k;
          best_w.col(i) = tw.col(i);
        }
        const double cb2 = sparsify_cost(tb.col(i), params.gamma1_bone);
        if (cb2 < cost_b(i)) {
          cost_b(i) = cb2;
          kb[static_cast<std::size_t>(i)] = k;
          best_b.col(i) = tb.col(i);
        }
      }
    }
    for (int k = 0; k < model.cross.size(); ++k) {
      const Eigen::MatrixXd tx = model.cross[k] * patches.middleCols(cb, len);
      for (Eigen::Index i = 0; i < len; ++i) {
        const double cx = sparsify_cost(tx.col(i), params.gamma2);
        if (cx < cost_x(i)) {
          cost_x(i) = cx;
          kx[static_cast<std::size_t>(i)] = k;
          best_x.col(i) = tx.col(i);
        }
      }
    }

    for (Eigen::Index i = 0; i < len; ++i) {
      const double common_cost = params.beta1 * (cost_w(i) + cost_b(i));
      const double cross_cost = params.beta2 * cost_x(i);
      PatchLabel label;
      if (common_cost <= cross_cost) {
        label.model = 1;
        label.k_water = kw[static_cast<std::size_t>(i)];
        label.k_bone = kb[static_cast<std::size_t>(i)];
        hard_threshold_inplace(best_w.col(i), params.gamma1_water);
        hard_threshold_inplace(best_b.col(i), params.gamma1_bone);
        out.codes.col(cb + i).head(m) = best_w.col(i);
        out.codes.col(cb + i).tail(m) = best_b.col(i);
      } else {
        label.model = 2;
        label.k_cross = kx[static_cast<std::size_t>(i)];
        hard_threshold_inplace(best_x.col(i), params.gamma2);
        out.codes.col(cb + i) = best_x.col(i);
      }
      out.labels[static_cast<std::size_t>(cb + i)] = label;
    }
  });
  return out;
}

// Mixed-model objective at (x, codes): weighted data fidelity plus the
// beta-weighted sparsification errors and l0 penalties.
inline ObjectiveTrace::Entry objective_p0(const MaterialImagePair& x, const AttenuationPair& y,
                                          const SparseCodeSet& codes, const MultraModel& model,
                                          const DecompositionParams& params,
                                          const DecompositionSystem& system) {
  system.validate();
  detail::check_code_geometry(codes, system);
  return detail::objective_entry(x, y, detail::build_coded_multra(codes, model, params), system);
}

// Exact minimizer of the image subproblem at fixed codes (see Eq. above).
inline MaterialImagePair image_update(const AttenuationPair& y, const SparseCodeSet& codes,
                                      const MultraModel& model,
                                      const DecompositionParams& params,
                                      const DecompositionSystem& system) {
  system.validate();
  detail::check_code_geometry(codes, system);
  return detail::image_update_core(y, detail::build_coded_multra(codes, model, params), system);
}

struct DecomposeResult {
  MaterialImagePair images;
  SparseCodeSet codes;
  ObjectiveTrace trace;
};

namespace detail {

template <typename CodeFn, typename CodedFn>
DecomposeResult alternate(const AttenuationPair& y, const DecompositionSystem& system,
                          const MaterialImagePair& x_init, int iterations, CodeFn code,
                          CodedFn build) {
  system.validate();
  y.validate();
  x_init.validate();
  if (y.width() != system.width || y.height() != system.height)
    throw dimension_error("decompose: measurement dimensions do not match system");
  if (x_init.width() != system.width || x_init.height() != system.height)
    throw dimension_error("decompose: initial image dimensions do not match system");

  DecomposeResult result;
  result.images = x_init;
  result.codes = code(result.images);
  CodedPatches coded = build(result.codes);
  const auto initial = objective_entry(result.images, y, coded, system);
  result.trace.append(initial.fidelity, initial.regularizer);

  for (int it = 0; it < iterations; ++it) {
    result.images = image_update_core(y, coded, system);
    result.codes = code(result.images);
    coded = build(result.codes);
    const auto entry = objective_entry(result.images, y, coded, system);
    result.trace.append(entry.fidelity, entry.regularizer);
  }
  return result;
}

}  // namespace detail

// Alternating exact minimization for the mixed-model problem. The trace has
// one entry per iteration (plus the initial point) and is non-increasing.
inline DecomposeResult decompose_multra(const AttenuationPair& y, const MultraModel& model,
                                        const DecompositionParams& params,
                                        const DecompositionSystem& system,
                                        const MaterialImagePair& x_init) {
  model.validate();
  params.validate();
  if (model.patch.side != system.patch.side || model.patch.stride != system.patch.stride)
    throw dimension_error("decompose_multra: model and system patch geometry differ");
  return detail::alternate(
      y, system, x_init, params.iterations,
      [&](const MaterialImagePair& x) { return sparse_code_and_cluster(x, model, params); },
      [&](const SparseCodeSet& codes) { return detail::build_coded_multra(codes, model, params); });
}

struct CultraParams {
  double beta = 70.0;
  double gamma = 0.07;
  int iterations = 500;

  void validate() const {
    if (!(beta > 0.0 && gamma > 0.0))
      throw numerical_error("CultraParams: beta and gamma must be positive");
    if (iterations <= 0) throw numerical_error("CultraParams: iterations must be positive");
  }
};

namespace detail {

inline CodedPatches build_coded_cross_only(const SparseCodeSet& codes,
                                           const TransformUnion& cross, double beta,
                                           double gamma) {
  const int m2 = cross.dim();
  const Eigen::Index n = codes.count();
  CodedPatches coded;
  coded.backproj.resize(m2, n);
  coded.w_water = Eigen::VectorXd::Constant(n, beta);
  coded.w_bone = Eigen::VectorXd::Constant(n, beta);
  coded.pen_water.resize(n);
  coded.pen_bone.resize(n);
  const double g2 = gamma * gamma;
  const int m = m2 / 2;
  threading::parallel_chunks(n, kColumnChunk, [&](std::int64_t jb, std::int64_t je) {
    for (std::int64_t j = jb; j < je; ++j) {
      const int k = codes.labels[static_cast<std::size_t>(j)].k_cross;
      if (k < 0 || k >= cross.size())
        throw dimension_error("sparse codes: cross class index out of range");
      coded.backproj.col(j).noalias() = cross[k].transpose() * codes.codes.col(j);
      coded.pen_water(j) = g2 * nonzero_count(codes.codes.col(j).head(m));
      coded.pen_bone(j) = g2 * nonzero_count(codes.codes.col(j).tail(m));
    }
  });
  return coded;
}

}  // namespace detail

// Cross-material-only variant: every patch is restricted to the cross union.
inline DecomposeResult decompose_cultra(const AttenuationPair& y, const TransformUnion& cross,
                                        const CultraParams& params,
                                        const DecompositionSystem& system,
                                        const MaterialImagePair& x_init) {
  cross.validate();
  params.validate();
  if (cross.dim() != 2 * system.patch.vector_size())
    throw dimension_error("decompose_cultra: cross union dim must be 2*side^2");

  auto code = [&](const MaterialImagePair& x) {
    const Eigen::MatrixXd patches = extract_patches(x, system.patch);
    ClusterCode cc = cluster_and_code(patches, cross, params.gamma);
    SparseCodeSet codes;
    codes.patch = system.patch;
    codes.image_width = x.width();
    codes.image_height = x.height();
    codes.codes = std::move(cc.codes);
    codes.labels.resize(static_cast<std::size_t>(patches.cols()));
    for (std::size_t j = 0; j < codes.labels.size(); ++j)
      codes.labels[j] = PatchLabel{2, 0, 0, cc.assignment[j]};
    return codes;
  };
  auto build = [&](const SparseCodeSet& codes) {
    return detail::build_coded_cross_only(codes, cross, params.beta, params.gamma);
  };
  return detail::alternate(y, system, x_init, params.iterations, code, build);
}

struct StParams {
  double beta_water = 50.0;
  double beta_bone = 70.0;
  double gamma_water = 0.03;
  double gamma_bone = 0.04;
  int iterations = 500;

  void validate() const {
    if (!(beta_water > 0.0 && beta_bone > 0.0 && gamma_water > 0.0 && gamma_bone > 0.0))
      throw numerical_error("StParams: weights and thresholds must be positive");
    if (iterations <= 0) throw numerical_error("StParams: iterations must be positive");
  }
};

// Single-transform-per-material variant: fixed clustering (water patches use
// the water transform, bone patches the bone transform) with per-material
// weights and thresholds.
inline DecomposeResult decompose_st(const AttenuationPair& y, const UnitaryTransform& water,
                                    const UnitaryTransform& bone, const StParams& params,
                                    const DecompositionSystem& system,
                                    const MaterialImagePair& x_init) {
  water.validate();
  bone.validate();
  params.validate();
  const int m = system.patch.vector_size();
  if (water.dim() != m || bone.dim() != m)
    throw dimension_error("decompose_st: transform dim must equal side^2");

  auto code = [&](const MaterialImagePair& x) {
    const Eigen::MatrixXd patches = extract_patches(x, system.patch);
    const Eigen::Index n = patches.cols();
    SparseCodeSet codes;
    codes.patch = system.patch;
    codes.image_width = x.width();
    codes.image_height = x.height();
    codes.labels.assign(static_cast<std::size_t>(n), PatchLabel{1, 0, 0, 0});
    codes.codes.resize(2 * m, n);
    threading::parallel_chunks(n, detail::kColumnChunk, [&](std::int64_t jb, std::int64_t je) {
      const Eigen::Index len = je - jb;
      Eigen::MatrixXd tw = water.matrix * patches.middleRows(0, m).middleCols(jb, len);
      Eigen::MatrixXd tb = bone.matrix * patches.middleRows(m, m).middleCols(jb, len);
      for (Eigen::Index i = 0; i < len; ++i) {
        hard_threshold_inplace(tw.col(i), params.gamma_water);
        hard_threshold_inplace(tb.col(i), params.gamma_bone);
        codes.codes.col(jb + i).head(m) = tw.col(i);
        codes.codes.col(jb + i).tail(m) = tb.col(i);
      }
    });
    return codes;
  };
  auto build = [&](const SparseCodeSet& codes) {
    const Eigen::Index n = codes.count();
    detail::CodedPatches coded;
    coded.backproj.resize(2 * m, n);
    coded.w_water = Eigen::VectorXd::Constant(n, params.beta_water);
    coded.w_bone = Eigen::VectorXd::Constant(n, params.beta_bone);
    coded.pen_water.resize(n);
    coded.pen_bone.resize(n);
    const double gw2 = params.gamma_water * params.gamma_water;
    const double gb2 = params.gamma_bone * params.gamma_bone;
    threading::parallel_chunks(n, detail::kColumnChunk, [&](std::int64_t jb, std::int64_t je) {
      for (std::int64_t j = jb; j < je; ++j) {
        coded.backproj.col(j).head(m).noalias() =
            water.matrix.transpose() * codes.codes.col(j).head(m);
        coded.backproj.col(j).tail(m).noalias() =
            bone.matrix.transpose() * codes.codes.col(j).tail(m);
        coded.pen_water(j) = gw2 * nonzero_count(codes.codes.col(j).head(m));
        coded.pen_bone(j) = gb2 * nonzero_count(codes.codes.col(j).tail(m));
      }
    });
    return coded;
  };
  return detail::alternate(y, system, x_init, params.iterations, code, build);
}

// Edge-preserving hyperbola potential psi(t) = (delta^2/3)(sqrt(1+3(t/delta)^2)-1).
inline double ep_potential(double t, double delta) {
  const double s = t / delta;
  return delta * delta / 3.0 * (std::sqrt(1.0 + 3.0 * s * s) - 1.0);
}

// d/dt psi(t) = t / sqrt(1 + 3 t^2 / delta^2).
inline double ep_potential_derivative(double t, double delta) {
  const double s = t / delta;
  return t / std::sqrt(1.0 + 3.0 * s * s);
}

struct EpParams {
  double beta_water = 256.0;          // 2^8
  double beta_bone = 362.03867196751236;  // 2^8.5
  double delta_water = 0.01;  // g/cm^3
  double delta_bone = 0.02;
  int iterations = 500;

  void validate() const {
    if (!(beta_water > 0.0 && beta_bone > 0.0 && delta_water > 0.0 && delta_bone > 0.0))
      throw numerical_error("EpParams: weights and deltas must be positive");
    if (iterations <= 0) throw numerical_error("EpParams: iterations must be positive");
  }
};

struct EpResult {
  MaterialImagePair images;
  ObjectiveTrace trace;
};

namespace detail {

inline constexpr int kNeighborOffsets[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0},
                                               {1, 0},   {-1, 1}, {0, 1},  {1, 1}};

inline double ep_regularizer(const ImageGrid& img, double beta, double delta) {
  double total = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double v = img.at(x, y);
      for (const auto& off : kNeighborOffsets) {
        const int nx = x + off[0];
        const int ny = y + off[1];
        if (nx < 0 || ny < 0 || nx >= img.width || ny >= img.height) continue;
        total += ep_potential(v - img.at(nx, ny), delta);
      }
    }
  return beta * total;
}

// Per-pixel gradient (g) and separable surrogate curvature (d) of the
// 8-neighbor penalty. Every ordered neighbor pair contributes psi' once to
// each endpoint and 2*psi''(0) to the curvature; with the hyperbola potential
// psi''(0) = 1 is the maximum curvature, so the surrogate majorizes.
inline void ep_gradient_curvature(const ImageGrid& img, double beta, double delta,
                                  ImageGrid& grad, ImageGrid& curv) {
  threading::parallel_chunks(img.height, kRowChunk, [&](std::int64_t yb, std::int64_t ye) {
    for (int y = static_cast<int>(yb); y < ye; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double v = img.at(x, y);
        double g = 0.0;
        int valid = 0;
        for (const auto& off : kNeighborOffsets) {
          const int nx = x + off[0];
          const int ny = y + off[1];
          if (nx < 0 || ny < 0 || nx >= img.width || ny >= img.height) continue;
          g += ep_potential_derivative(v - img.at(nx, ny), delta);
          ++valid;
        }
        grad.at(x, y) = 2.0 * beta * g;
        curv.at(x, y) = 4.0 * beta * valid;
      }
  });
}

}  // namespace detail

// PWLS with the edge-preserving regularizer, minimized by separable quadratic
// surrogate descent; exact quadratic data term, majorized penalty, monotone
// by construction.
inline EpResult decompose_ep(const AttenuationPair& y, const EpParams& ep,
                             const DecompositionSystem& system,
                             const MaterialImagePair& x_init) {
  ep.validate();
  system.validate();
  y.validate();
  x_init.validate();
  if (y.width() != system.width || y.height() != system.height ||
      x_init.width() != system.width || x_init.height() != system.height)
    throw dimension_error("decompose_ep: dimensions do not match system");

  const Eigen::Matrix2d a0 = system.atten.matrix();
  const Eigen::Matrix2d atw = a0.transpose() * system.noise.weight();
  const Eigen::Matrix2d atwa = atw * a0;

  EpResult result;
  result.images = x_init;

  auto objective = [&](const MaterialImagePair& x) {
    const double fid = detail::fidelity_term(x, y, system);
    const double reg = detail::ep_regularizer(x.water, ep.beta_water, ep.delta_water) +
                       detail::ep_regularizer(x.bone, ep.beta_bone, ep.delta_bone);
    result.trace.append(fid, reg);
  };
  objective(result.images);

  ImageGrid gw = ImageGrid::zeros(system.width, system.height, PixelUnit::dimensionless);
  ImageGrid cw = gw, gb = gw, cb = gw;

  for (int it = 0; it < ep.iterations; ++it) {
    detail::ep_gradient_curvature(result.images.water, ep.beta_water, ep.delta_water, gw, cw);
    detail::ep_gradient_curvature(result.images.bone, ep.beta_bone, ep.delta_bone, gb, cb);

    MaterialImagePair next = MaterialImagePair::zeros(system.width, system.height);
    const std::int64_t n = static_cast<std::int64_t>(system.width) * system.height;
    threading::parallel_chunks(n, 1 << 14, [&](std::int64_t jb, std::int64_t je) {
      for (std::int64_t j = jb; j < je; ++j) {
        const std::size_t s = static_cast<std::size_t>(j);
        const double h00 = atwa(0, 0) + cw.values[s];
        const double h01 = atwa(0, 1);
        const double h10 = atwa(1, 0);
        const double h11 = atwa(1, 1) + cb.values[s];
        const double det = h00 * h11 - h01 * h10;
        const double rhs0 = atw(0, 0) * y.high.values[s] + atw(0, 1) * y.low.values[s] -
                            gw.values[s] + cw.values[s] * result.images.water.values[s];
        const double rhs1 = atw(1, 0) * y.high.values[s] + atw(1, 1) * y.low.values[s] -
                            gb.values[s] + cb.values[s] * result.images.bone.values[s];
        next.water.values[s] = (h11 * rhs0 - h01 * rhs1) / det;
        next.bone.values[s] = (h00 * rhs1 - h10 * rhs0) / det;
      }
    });
    result.images = std::move(next);
    objective(result.images);
  }
  return result;
}

// Per-pixel (model, class) labels by plurality vote among covering patches.
struct ClusterMap {
  int width = 0;
  int height = 0;
  std::vector<PatchLabel> labels;

  const PatchLabel& at(int x, int y) const {
    return labels[static_cast<std::size_t>(y) * width + x];
  }
};

inline ClusterMap pixel_cluster_map(const SparseCodeSet& codes, const PatchConfig& cfg,
                                    int width, int height) {
  const PatchGrid grid = patch_grid(cfg, width, height);
  if (codes.count() != grid.count())
    throw dimension_error("pixel_cluster_map: code count does not match patch geometry");

  ClusterMap map;
  map.width = width;
  map.height = height;
  map.labels.assign(static_cast<std::size_t>(width) * height, PatchLabel{});

  const int side = cfg.side;
  const int stride = cfg.stride;
  const auto first_cover = [side, stride](int c) {
    const int a = c - side + 1;
    return a > 0 ? (a + stride - 1) / stride : 0;
  };

  threading::parallel_chunks(height, detail::kRowChunk, [&](std::int64_t yb, std::int64_t ye) {
    std::vector<PatchLabel> candidates;
    std::vector<int> counts;
    for (int y = static_cast<int>(yb); y < ye; ++y) {
      const int ky0 = first_cover(y);
      const int ky1 = std::min(grid.ny - 1, y / stride);
      for (int x = 0; x < width; ++x) {
        const int kx0 = first_cover(x);
        const int kx1 = std::min(grid.nx - 1, x / stride);
        candidates.clear();
        counts.clear();
        for (int ky = ky0; ky <= ky1; ++ky)
          for (int kx = kx0; kx <= kx1; ++kx) {
            const PatchLabel& label = codes.labels[static_cast<std::size_t>(ky) * grid.nx + kx];
            bool found = false;
            for (std::size_t c = 0; c < candidates.size(); ++c)
              if (candidates[c] == label) {
                ++counts[c];
                found = true;
                break;
              }
            if (!found) {
              candidates.push_back(label);
              counts.push_back(1);
            }
          }
        // plurality, ties to the lexicographically lowest label
        std::size_t best = 0;
        for (std::size_t c = 1; c < candidates.size(); ++c)
          if (counts[c] > counts[best] ||
              (counts[c] == counts[best] && candidates[c] < candidates[best]))
            best = c;
        map.labels[static_cast<std::size_t>(y) * width + x] = candidates[best];
      }
    }
  });
  return map;
}

}  // namespace multra
