#pragma once

// Learns a union of unitary sparsifying transforms with joint clustering by
// alternating a sparse coding/clustering step (closed-form hard thresholding,
// per-vector argmin over classes) and a transform update step (orthogonal
// Procrustes via small SVDs). Both half-steps are exact minimizers of their
// subproblems, so the objective
//   sum_k sum_{i in C_k} ||Omega_k Y_i - Z_i||^2 + eta^2 ||Z_i||_0
// never increases.

#include "multra/patches.hpp"
#include "multra/seeding.hpp"
#include "multra/threading.hpp"
#include "multra/types.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace multra {

struct LearningParams {
  enum class Init { dct_rotations, random_orthonormal };

  int num_classes = 1;
  double eta = 0.1;
  int iterations = 100;
  std::uint64_t seed = 0;
  Init init = Init::dct_rotations;

  void validate() const {
    if (num_classes < 1) throw numerical_error("LearningParams: need at least one class");
    if (!(eta > 0.0)) throw numerical_error("LearningParams: eta must be positive");
    if (iterations <= 0) throw numerical_error("LearningParams: iterations must be positive");
  }
};

// Orthonormal DCT-II matrix of size n.
inline Eigen::MatrixXd dct_matrix(int n) {
  Eigen::MatrixXd d(n, n);
  const double scale0 = std::sqrt(1.0 / n);
  const double scale = std::sqrt(2.0 / n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      d(k, j) = (k == 0 ? scale0 : scale) *
                std::cos(std::numbers::pi * (2.0 * j + 1.0) * k / (2.0 * n));
  return d;
}

inline Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Separable DCT matched to the patch layout: 2D for m = side^2 vectors,
// channel x 2D for stacked 2*side^2 vectors, plain 1D otherwise.
inline Eigen::MatrixXd patch_dct(int dim, int side) {
  const int m = side * side;
  if (dim == m) return kronecker(dct_matrix(side), dct_matrix(side));
  if (dim == 2 * m)
    return kronecker(dct_matrix(2), kronecker(dct_matrix(side), dct_matrix(side)));
  return dct_matrix(dim);
}

// Product of random Givens rotations; exactly orthogonal by construction.
inline Eigen::MatrixXd random_rotation(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, dim - 1);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(dim, dim);
  const int sweeps = 3 * dim;
  for (int s = 0; s < sweeps; ++s) {
    int i = pick(rng);
    int j = pick(rng);
    if (i == j) j = (j + 1) % dim;
    const double theta = angle(rng);
    const double c = std::cos(theta), sn = std::sin(theta);
    // rot <- G(i,j,theta) * rot
    Eigen::RowVectorXd ri = rot.row(i), rj = rot.row(j);
    rot.row(i) = c * ri - sn * rj;
    rot.row(j) = sn * ri + c * rj;
  }
  return rot;
}

inline Eigen::MatrixXd random_orthonormal(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(dim, dim);
  for (int c = 0; c < dim; ++c)
    for (int r = 0; r < dim; ++r) g(r, c) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < dim; ++c)
    if (r(c, c) < 0.0) q.col(c) = -q.col(c);
  return q;
}

// Distinct unitary starting points per class; class k applies a seeded random
// rotation to the separable patch DCT.
inline TransformUnion initial_union(TransformUnion::Kind kind, int num_classes, int dim,
                                    int patch_side, std::uint64_t seed,
                                    LearningParams::Init init) {
  TransformUnion u;
  u.kind = kind;
  const Eigen::MatrixXd dct = patch_dct(dim, patch_side);
  for (int k = 0; k < num_classes; ++k) {
    const std::uint64_t class_seed = detail::mix_seed(seed, static_cast<std::uint64_t>(k) + 1);
    UnitaryTransform t;
    t.matrix = (init == LearningParams::Init::dct_rotations)
                   ? Eigen::MatrixXd(random_rotation(dim, class_seed) * dct)
                   : random_orthonormal(dim, class_seed);
    u.transforms.push_back(std::move(t));
  }
  return u;
}

struct ClusterCode {
  std::vector<int> assignment;  // class index per vector
  Eigen::MatrixXd codes;        // d x N, column i is Z_i
  Eigen::VectorXd costs;        // per-vector cost at the chosen class
};

// Assigns each vector to argmin_k of the thresholded sparsification cost
// (ties to the lowest class index) and codes it under the winning transform.
inline ClusterCode cluster_and_code(const Eigen::MatrixXd& vectors, const TransformUnion& u,
                                    double eta) {
  u.validate();
  if (vectors.rows() != u.dim())
    throw dimension_error("cluster_and_code: vector dim does not match union dim");
  const Eigen::Index n = vectors.cols();

  ClusterCode out;
  out.assignment.assign(static_cast<std::size_t>(n), 0);
  out.codes.resize(vectors.rows(), n);
  out.costs.resize(n);

  threading::parallel_chunks(n, detail::kColumnChunk, [&](std::int64_t cb, std::int64_t ce) {
    const Eigen::Index len = ce - cb;
    Eigen::MatrixXd best(vectors.rows(), len);
    Eigen::VectorXd best_cost = Eigen::VectorXd::Constant(len, std::numeric_limits<double>::infinity());
    std::vector<int> best_k(static_cast<std::size_t>(len), 0);
    for (int k = 0; k < u.size(); ++k) {
      const Eigen::MatrixXd transformed = u[k] * vectors.middleCols(cb, len);
      for (Eigen::Index i = 0; i < len; ++i) {
        const double cost = sparsify_cost(transformed.col(i), eta);
        if (cost < best_cost(i)) {
          best_cost(i) = cost;
          best_k[static_cast<std::size_t>(i)] = k;
          best.col(i) = transformed.col(i);
        }
      }
    }
    for (Eigen::Index i = 0; i < len; ++i) {
      hard_threshold_inplace(best.col(i), eta);
      out.codes.col(cb + i) = best.col(i);
      out.assignment[static_cast<std::size_t>(cb + i)] = best_k[static_cast<std::size_t>(i)];
      out.costs(cb + i) = best_cost(i);
    }
  });
  return out;
}

// Training objective at a given clustering/coding.
inline double p1_objective(const Eigen::MatrixXd& vectors, const TransformUnion& u,
                           const std::vector<int>& assignment, const Eigen::MatrixXd& codes,
                           double eta) {
  const double eta2 = eta * eta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < vectors.cols(); ++i) {
    const Eigen::VectorXd residual =
        u[assignment[static_cast<std::size_t>(i)]] * vectors.col(i) - codes.col(i);
    total += residual.squaredNorm() + eta2 * nonzero_count(codes.col(i));
  }
  return total;
}

// Closed-form minimizer of ||Omega Y - Z||_F^2 over unitary Omega: with
// Y Z^T = U S V^T, Omega = V U^T. Singular vector pairs get a deterministic
// sign (largest-magnitude entry of each left vector made positive) so
// rank-deficient products resolve reproducibly.
inline UnitaryTransform procrustes_update(const Eigen::MatrixXd& data,
                                          const Eigen::MatrixXd& codes) {
  if (data.rows() != codes.rows() || data.cols() != codes.cols())
    throw dimension_error("procrustes_update: data/codes shape mismatch");
  if (data.cols() < 1) throw dimension_error("procrustes_update: empty cluster");

  const Eigen::MatrixXd product = data * codes.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(product, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::MatrixXd u = svd.matrixU();
  Eigen::MatrixXd v = svd.matrixV();
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    Eigen::Index r = 0;
    u.col(c).cwiseAbs().maxCoeff(&r);
    if (u(r, c) < 0.0) {
      u.col(c) = -u.col(c);
      v.col(c) = -v.col(c);
    }
  }
  return UnitaryTransform{v * u.transpose()};
}

struct LearnResult {
  TransformUnion transforms;
  // Objective recorded after every half-step: entries alternate
  // (post-clustering, post-transform-update) per iteration.
  std::vector<double> objective;
};

namespace detail {

// Reflection mapping v to a multiple of e_0; gives an empty class a transform
// under which the worst-coded vector becomes 1-sparse, guaranteeing its cost
// cannot exceed the current one at the next clustering step.
inline Eigen::MatrixXd householder_sparsifier(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  Eigen::VectorXd w = v;
  w(0) += (v(0) >= 0.0 ? norm : -norm);
  const double wsq = w.squaredNorm();
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(v.size(), v.size());
  if (wsq > 0.0) h -= (2.0 / wsq) * (w * w.transpose());
  return h;
}

}  // namespace detail

// Alternating minimization for the union-of-transforms training problem.
// warm_start, when given, overrides the seeded initialization (the alternation
// only ever descends, so a feasible starting model bounds the final objective).
inline LearnResult learn_union(const Eigen::MatrixXd& vectors, const LearningParams& params,
                               TransformUnion::Kind kind = TransformUnion::Kind::common_2d,
                               int patch_side = 0,
                               const TransformUnion* warm_start = nullptr) {
  params.validate();
  const Eigen::Index n = vectors.cols();
  const int dim = static_cast<int>(vectors.rows());
  if (n < params.num_classes)
    throw dimension_error("learn_union: fewer training vectors than classes");
  if (patch_side <= 0) patch_side = static_cast<int>(std::lround(std::sqrt(double(dim))));

  LearnResult result;
  if (warm_start) {
    warm_start->validate();
    if (warm_start->size() != params.num_classes || warm_start->dim() != dim)
      throw dimension_error("learn_union: warm start does not match K or dim");
    result.transforms = *warm_start;
    result.transforms.kind = kind;
  } else {
    result.transforms =
        initial_union(kind, params.num_classes, dim, patch_side, params.seed, params.init);
  }

  const int K = params.num_classes;
  for (int it = 0; it < params.iterations; ++it) {
    ClusterCode cc = cluster_and_code(vectors, result.transforms, params.eta);
    result.objective.push_back(
        p1_objective(vectors, result.transforms, cc.assignment, cc.codes, params.eta));

    // Gather members per class in vector-index order.
    std::vector<std::vector<int>> members(static_cast<std::size_t>(K));
    for (Eigen::Index i = 0; i < n; ++i)
      members[static_cast<std::size_t>(cc.assignment[static_cast<std::size_t>(i)])].push_back(
          static_cast<int>(i));

    threading::parallel_chunks(K, 1, [&](std::int64_t kb, std::int64_t ke) {
      for (std::int64_t k = kb; k < ke; ++k) {
        const auto& idx = members[static_cast<std::size_t>(k)];
        if (idx.empty()) continue;
        Eigen::MatrixXd yk(dim, idx.size());
        Eigen::MatrixXd zk(dim, idx.size());
        for (std::size_t c = 0; c < idx.size(); ++c) {
          yk.col(c) = vectors.col(idx[c]);
          zk.col(c) = cc.codes.col(idx[c]);
        }
        result.transforms.transforms[static_cast<std::size_t>(k)] = procrustes_update(yk, zk);
      }
    });

    // Empty classes adapt to the currently worst-coded vectors. Their members
    // are unchanged (none), so the objective is unaffected at this half-step.
    std::vector<char> reserved(static_cast<std::size_t>(n), 0);
    for (int k = 0; k < K; ++k) {
      if (!members[static_cast<std::size_t>(k)].empty()) continue;
      int worst = -1;
      double worst_cost = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (reserved[static_cast<std::size_t>(i)]) continue;
        if (cc.costs(i) > worst_cost) {
          worst_cost = cc.costs(i);
          worst = static_cast<int>(i);
        }
      }
      if (worst < 0) break;
      reserved[static_cast<std::size_t>(worst)] = 1;
      const Eigen::VectorXd v = vectors.col(worst);
      if (v.norm() > 0.0)
        result.transforms.transforms[static_cast<std::size_t>(k)].matrix =
            detail::householder_sparsifier(v);
    }

    result.objective.push_back(
        p1_objective(vectors, result.transforms, cc.assignment, cc.codes, params.eta));
  }
  return result;
}

struct MultraTrainResult {
  MultraModel model;
  std::vector<double> common_objective;
  std::vector<double> cross_objective;
};

namespace detail {

inline Eigen::MatrixXd subsample_columns(const Eigen::MatrixXd& m, int rate) {
  if (rate <= 1) return m;
  const Eigen::Index kept = (m.cols() + rate - 1) / rate;
  Eigen::MatrixXd out(m.rows(), kept);
  for (Eigen::Index i = 0; i < kept; ++i) out.col(i) = m.col(i * rate);
  return out;
}

}  // namespace detail

// Trains the mixed model: the common union on per-material 2D patches pooled
// from water and bone images, the cross union on stacked patches. subsample
// keeps every subsample-th patch of each source image (deterministic).
inline MultraTrainResult learn_multra_model(const std::vector<MaterialImagePair>& training,
                                            const PatchConfig& cfg,
                                            const LearningParams& common_params,
                                            const LearningParams& cross_params,
                                            int subsample = 1) {
  if (training.empty()) throw dimension_error("learn_multra_model: empty training set");
  cfg.validate();
  const int m = cfg.vector_size();

  Eigen::Index n_common = 0, n_cross = 0;
  std::vector<Eigen::MatrixXd> water_patches, bone_patches, stacked_patches;
  for (const auto& pair : training) {
    pair.validate();
    water_patches.push_back(
        detail::subsample_columns(extract_patches(pair.water, cfg), subsample));
    bone_patches.push_back(
        detail::subsample_columns(extract_patches(pair.bone, cfg), subsample));
    stacked_patches.push_back(detail::subsample_columns(extract_patches(pair, cfg), subsample));
    n_common += water_patches.back().cols() + bone_patches.back().cols();
    n_cross += stacked_patches.back().cols();
  }

  Eigen::MatrixXd common_data(m, n_common);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < training.size(); ++i) {
    common_data.middleCols(at, water_patches[i].cols()) = water_patches[i];
    at += water_patches[i].cols();
    common_data.middleCols(at, bone_patches[i].cols()) = bone_patches[i];
    at += bone_patches[i].cols();
  }
  Eigen::MatrixXd cross_data(2 * m, n_cross);
  at = 0;
  for (const auto& p : stacked_patches) {
    cross_data.middleCols(at, p.cols()) = p;
    at += p.cols();
  }

  MultraTrainResult out;
  LearnResult common =
      learn_union(common_data, common_params, TransformUnion::Kind::common_2d, cfg.side);
  LearnResult cross =
      learn_union(cross_data, cross_params, TransformUnion::Kind::cross_3d, cfg.side);
  out.model = MultraModel{std::move(common.transforms), std::move(cross.transforms), cfg};
  out.model.validate();
  out.common_objective = std::move(common.objective);
  out.cross_objective = std::move(cross.objective);
  return out;
}

}  // namespace multra
