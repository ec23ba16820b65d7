#include "multra/decompose.hpp"
#include "multra/simulate.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

using namespace multra;

namespace {

const MassAttenuationMatrix kAtten{0.171, 0.252, 0.223, 0.480};

DecompositionSystem make_system(int width, int height, int side = 4, int stride = 1,
                                double sigma2 = 1e-5) {
  DecompositionSystem system;
  system.atten = kAtten;
  system.noise = NoiseWeights{sigma2, sigma2};
  system.patch = PatchConfig{side, stride};
  system.width = width;
  system.height = height;
  return system;
}

MultraModel random_model(int side, int k_common, int k_cross, std::uint64_t seed) {
  const int m = side * side;
  MultraModel model;
  model.common.kind = TransformUnion::Kind::common_2d;
  model.cross.kind = TransformUnion::Kind::cross_3d;
  model.patch = PatchConfig{side, 1};
  for (int k = 0; k < k_common; ++k)
    model.common.transforms.push_back(
        UnitaryTransform{random_rotation(m, detail::mix_seed(seed, k + 1))});
  for (int k = 0; k < k_cross; ++k)
    model.cross.transforms.push_back(
        UnitaryTransform{random_rotation(2 * m, detail::mix_seed(seed, 100 + k))});
  return model;
}

MaterialImagePair noisy_phantom_truth(int size, std::uint64_t seed) {
  return generate_phantom(default_scene(size, size), size, size, seed);
}

bool trace_non_increasing(const ObjectiveTrace& trace, double rel_tol = 1e-9) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const double prev = trace.entries[i - 1].total;
    if (trace.entries[i].total > prev + rel_tol * std::max(1.0, std::abs(prev))) return false;
  }
  return true;
}

// --- independent oracles -------------------------------------------------

// Eq.-style quadratic cost at fixed codes, evaluated in the direct transform
// form ||Omega P x - z||^2 (no unitary shortcut); used for gradient checks.
double quadratic_cost_direct(const MaterialImagePair& x, const AttenuationPair& y,
                             const SparseCodeSet& codes, const MultraModel& model,
                             const DecompositionParams& params,
                             const DecompositionSystem& system) {
  const Eigen::Matrix2d a0 = system.atten.matrix();
  const double wh = 1.0 / system.noise.sigma2_high;
  const double wl = 1.0 / system.noise.sigma2_low;
  double cost = 0.0;
  for (std::size_t j = 0; j < x.water.size(); ++j) {
    const double rh =
        y.high.values[j] - (a0(0, 0) * x.water.values[j] + a0(0, 1) * x.bone.values[j]);
    const double rl =
        y.low.values[j] - (a0(1, 0) * x.water.values[j] + a0(1, 1) * x.bone.values[j]);
    cost += 0.5 * (wh * rh * rh + wl * rl * rl);
  }
  const Eigen::MatrixXd patches = extract_patches(x, system.patch);
  const int m = system.patch.vector_size();
  for (Eigen::Index j = 0; j < patches.cols(); ++j) {
    const PatchLabel& label = codes.labels[static_cast<std::size_t>(j)];
    const auto z = codes.codes.col(j);
    if (label.model == 1) {
      cost += params.beta1 *
              (model.common[label.k_water] * patches.col(j).head(m) - z.head(m)).squaredNorm();
      cost += params.beta1 *
              (model.common[label.k_bone] * patches.col(j).tail(m) - z.tail(m)).squaredNorm();
    } else {
      cost += params.beta2 * (model.cross[label.k_cross] * patches.col(j) - z).squaredNorm();
    }
  }
  return cost;
}

// Conjugate gradient solve of the image subproblem normal equations
//   [A^T W A + 2 sum_j P_j^T diag(w_j) P_j] x = A^T W y + 2 sum_j P_j^T diag(w_j) t_j
// with explicit patch loops, independent of the pixel-wise closed form.
MaterialImagePair cg_image_solve(const AttenuationPair& y, const Eigen::MatrixXd& targets,
                                 const Eigen::VectorXd& w_water, const Eigen::VectorXd& w_bone,
                                 const DecompositionSystem& system, int max_iter = 4000,
                                 double tol = 1e-14) {
  const int width = system.width, height = system.height;
  const int n = width * height;
  const int side = system.patch.side, stride = system.patch.stride;
  const int nx = (width - side) / stride + 1;
  const int ny = (height - side) / stride + 1;
  const int m = side * side;
  const Eigen::Matrix2d a0 = system.atten.matrix();
  const Eigen::Matrix2d atw = a0.transpose() * system.noise.weight();
  const Eigen::Matrix2d atwa = atw * a0;

  auto apply_hessian = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * n);
    for (int j = 0; j < n; ++j) {
      out(j) += atwa(0, 0) * v(j) + atwa(0, 1) * v(n + j);
      out(n + j) += atwa(1, 0) * v(j) + atwa(1, 1) * v(n + j);
    }
    for (int ky = 0; ky < ny; ++ky)
      for (int kx = 0; kx < nx; ++kx) {
        const int patch = ky * nx + kx;
        for (int dy = 0; dy < side; ++dy)
          for (int dx = 0; dx < side; ++dx) {
            const int pix = (ky * stride + dy) * width + kx * stride + dx;
            out(pix) += 2.0 * w_water(patch) * v(pix);
            out(n + pix) += 2.0 * w_bone(patch) * v(n + pix);
          }
      }
    return out;
  };

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * n);
  for (int j = 0; j < n; ++j) {
    rhs(j) = atw(0, 0) * y.high.values[static_cast<std::size_t>(j)] +
             atw(0, 1) * y.low.values[static_cast<std::size_t>(j)];
    rhs(n + j) = atw(1, 0) * y.high.values[static_cast<std::size_t>(j)] +
                 atw(1, 1) * y.low.values[static_cast<std::size_t>(j)];
  }
  for (int ky = 0; ky < ny; ++ky)
    for (int kx = 0; kx < nx; ++kx) {
      const int patch = ky * nx + kx;
      for (int dy = 0; dy < side; ++dy)
        for (int dx = 0; dx < side; ++dx) {
          const int pix = (ky * stride + dy) * width + kx * stride + dx;
          const int idx = dy * side + dx;
          rhs(pix) += 2.0 * w_water(patch) * targets(idx, patch);
          rhs(n + pix) += 2.0 * w_bone(patch) * targets(m + idx, patch);
        }
    }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(2 * n);
  Eigen::VectorXd r = rhs - apply_hessian(x);
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  const double stop = tol * tol * rhs.squaredNorm();
  for (int it = 0; it < max_iter && rs > stop; ++it) {
    const Eigen::VectorXd hp = apply_hessian(p);
    const double alpha = rs / p.dot(hp);
    x += alpha * p;
    r -= alpha * hp;
    const double rs_next = r.squaredNorm();
    p = r + (rs_next / rs) * p;
    rs = rs_next;
  }

  MaterialImagePair out = MaterialImagePair::zeros(width, height);
  for (int j = 0; j < n; ++j) {
    out.water.values[static_cast<std::size_t>(j)] = x(j);
    out.bone.values[static_cast<std::size_t>(j)] = x(n + j);
  }
  return out;
}

double max_abs_diff(const MaterialImagePair& a, const MaterialImagePair& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.water.size(); ++j) {
    m = std::max(m, std::abs(a.water.values[j] - b.water.values[j]));
    m = std::max(m, std::abs(a.bone.values[j] - b.bone.values[j]));
  }
  return m;
}

double max_abs(const MaterialImagePair& a) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.water.size(); ++j) {
    m = std::max(m, std::abs(a.water.values[j]));
    m = std::max(m, std::abs(a.bone.values[j]));
  }
  return m;
}

}  // namespace

TEST_CASE("direct inversion basics") {
  AttenuationPair y = AttenuationPair::zeros(3, 2);
  for (std::size_t j = 0; j < y.high.size(); ++j) {
    y.high.values[j] = 2.0;
    y.low.values[j] = 4.0;
  }

  const MassAttenuationMatrix identity{1.0, 1e-14, 1e-14, 1.0};
  MaterialImagePair x = direct_inversion(y, identity);
  CHECK(x.water.at(0, 0) == Catch::Approx(2.0).margin(1e-10));
  CHECK(x.bone.at(0, 0) == Catch::Approx(4.0).margin(1e-10));

  const MassAttenuationMatrix diag{2.0, 1e-14, 1e-14, 4.0};
  x = direct_inversion(y, diag);
  CHECK(x.water.at(2, 1) == Catch::Approx(1.0).margin(1e-10));
  CHECK(x.bone.at(2, 1) == Catch::Approx(1.0).margin(1e-10));

  const MassAttenuationMatrix singular{0.2, 0.4, 0.1, 0.2};
  CHECK_THROWS_AS(direct_inversion(y, singular), numerical_error);
}

TEST_CASE("noiseless forward model then direct inversion is the identity") {
  const MaterialImagePair truth = noisy_phantom_truth(32, 5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{0.0, 0.0}, 1);
  const MaterialImagePair x = direct_inversion(y, kAtten);
  CHECK(max_abs_diff(x, truth) <= 1e-10);
}

TEST_CASE("objective_p0 bookkeeping") {
  const int size = 16;
  const MaterialImagePair truth = noisy_phantom_truth(size, 6);
  const DecompositionSystem system = make_system(size, size);
  const AttenuationPair y =
      simulate_attenuation(truth, kAtten, NoiseWeights{1e-6, 1e-6}, 2);
  const MultraModel model = random_model(4, 2, 2, 11);

  DecompositionParams params;
  params.iterations = 1;

  SECTION("total is exactly fidelity plus regularizer") {
    const SparseCodeSet codes = sparse_code_and_cluster(truth, model, params);
    const auto entry = objective_p0(truth, y, codes, model, params, system);
    CHECK(entry.total == entry.fidelity + entry.regularizer);
  }

  SECTION("tiny gamma keeps codes exact; regularizer reduces to the l0 term") {
    DecompositionParams tiny = params;
    tiny.gamma1_water = tiny.gamma1_bone = tiny.gamma2 = 1e-6;
    const SparseCodeSet codes = sparse_code_and_cluster(truth, model, tiny);
    const auto entry = objective_p0(truth, y, codes, model, tiny, system);
    double expected = 0.0;
    for (Eigen::Index j = 0; j < codes.codes.cols(); ++j) {
      const PatchLabel& label = codes.labels[static_cast<std::size_t>(j)];
      const double beta = label.model == 1 ? tiny.beta1 : tiny.beta2;
      const double g2 = label.model == 1 ? tiny.gamma1_water * tiny.gamma1_water
                                         : tiny.gamma2 * tiny.gamma2;
      expected += beta * g2 * nonzero_count(codes.codes.col(j));
    }
    CHECK(entry.regularizer == Catch::Approx(expected).epsilon(1e-12));
  }

  SECTION("beta -> 0 with zero codes and noiseless data gives a vanishing objective") {
    const AttenuationPair clean = simulate_attenuation(truth, kAtten, NoiseWeights{0.0, 0.0}, 3);
    const MaterialImagePair x = direct_inversion(clean, kAtten);
    DecompositionParams small = params;
    small.beta1 = small.beta2 = 1e-12;
    SparseCodeSet zero_codes;
    zero_codes.patch = system.patch;
    zero_codes.image_width = size;
    zero_codes.image_height = size;
    const PatchGrid grid = patch_grid(system.patch, size, size);
    zero_codes.labels.assign(static_cast<std::size_t>(grid.count()), PatchLabel{});
    zero_codes.codes = Eigen::MatrixXd::Zero(2 * system.patch.vector_size(), grid.count());
    const auto entry = objective_p0(x, clean, zero_codes, model, small, system);
    CHECK(entry.fidelity <= 1e-12);
    CHECK(entry.total <= 1e-6);
  }

  SECTION("inconsistent codes are rejected") {
    SparseCodeSet codes = sparse_code_and_cluster(truth, model, params);
    codes.labels.pop_back();
    codes.codes.conservativeResize(Eigen::NoChange, codes.codes.cols() - 1);
    CHECK_THROWS_AS(objective_p0(truth, y, codes, model, params, system), dimension_error);
  }
}

TEST_CASE("sparse coding of the zero image picks the first common block") {
  const MaterialImagePair zero = MaterialImagePair::zeros(12, 12);
  const MultraModel model = random_model(4, 3, 2, 21);
  DecompositionParams params;
  const SparseCodeSet codes = sparse_code_and_cluster(zero, model, params);
  for (const auto& label : codes.labels) {
    CHECK(label.model == 1);
    CHECK(label.k_water == 0);
    CHECK(label.k_bone == 0);
  }
  CHECK(codes.codes.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sparse coding equals brute force over all block combinations") {
  const int side = 4, m = 16;
  const MultraModel model = random_model(side, 4, 3, 31);
  DecompositionParams params;
  params.beta1 = 1.3;
  params.beta2 = 0.9;
  params.gamma1_water = 0.25;
  params.gamma1_bone = 0.2;
  params.gamma2 = 0.22;

  // random image large enough for 200+ patches
  std::mt19937 rng(32);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  MaterialImagePair x = MaterialImagePair::zeros(20, 20);
  for (auto& v : x.water.values) v = uni(rng);
  for (auto& v : x.bone.values) v = uni(rng);

  const SparseCodeSet codes = sparse_code_and_cluster(x, model, params);
  const Eigen::MatrixXd patches = extract_patches(x, model.patch);
  REQUIRE(patches.cols() >= 200);

  for (Eigen::Index j = 0; j < patches.cols(); ++j) {
    // brute force over K1^2 materialized block transforms plus K2 cross ones
    double best_cost = std::numeric_limits<double>::infinity();
    PatchLabel best_label;
    Eigen::VectorXd best_code(2 * m);
    for (int kw = 0; kw < model.common.size(); ++kw)
      for (int kb = 0; kb < model.common.size(); ++kb) {
        Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * m, 2 * m);
        block.topLeftCorner(m, m) = model.common[kw];
        block.bottomRightCorner(m, m) = model.common[kb];
        const Eigen::VectorXd u = block * patches.col(j);
        const double cost =
            params.beta1 * (sparsify_cost(u.head(m), params.gamma1_water) +
                            sparsify_cost(u.tail(m), params.gamma1_bone));
        if (cost < best_cost) {
          best_cost = cost;
          best_label = PatchLabel{1, kw, kb, 0};
          best_code.head(m) = hard_threshold(u.head(m), params.gamma1_water);
          best_code.tail(m) = hard_threshold(u.tail(m), params.gamma1_bone);
        }
      }
    for (int k = 0; k < model.cross.size(); ++k) {
      const Eigen::VectorXd u = model.cross[k] * patches.col(j);
      const double cost = params.beta2 * sparsify_cost(u, params.gamma2);
      if (cost < best_cost) {
        best_cost = cost;
        best_label = PatchLabel{2, 0, 0, k};
        best_code = hard_threshold(u, params.gamma2);
      }
    }
    REQUIRE(codes.labels[static_cast<std::size_t>(j)] == best_label);
    REQUIRE((codes.codes.col(j) - best_code).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("a dominant common weight pushes every patch to the cross model") {
  const MultraModel model = random_model(4, 2, 2, 41);
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> uni(0.2, 1.0);
  MaterialImagePair x = MaterialImagePair::zeros(12, 12);
  for (auto& v : x.water.values) v = uni(rng);
  for (auto& v : x.bone.values) v = uni(rng);

  DecompositionParams params;
  params.beta1 = 1e6;
  params.beta2 = 1.0;
  const SparseCodeSet codes = sparse_code_and_cluster(x, model, params);
  for (const auto& label : codes.labels) CHECK(label.model == 2);
}

TEST_CASE("image update with no patches reduces to direct inversion") {
  const MaterialImagePair truth = noisy_phantom_truth(16, 7);
  const DecompositionSystem system = make_system(16, 16);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-6, 1e-6}, 4);
  const MultraModel model = random_model(4, 2, 2, 51);

  SparseCodeSet empty;
  empty.patch = system.patch;
  empty.image_width = 16;
  empty.image_height = 16;
  empty.codes.resize(2 * system.patch.vector_size(), 0);

  DecompositionParams params;
  const MaterialImagePair x = image_update(y, empty, model, params, system);
  CHECK(max_abs_diff(x, direct_inversion(y, kAtten)) <= 1e-12);
}

TEST_CASE("image update solves the quadratic subproblem exactly") {
  const int size = 16;
  const MaterialImagePair truth = noisy_phantom_truth(size, 8);
  const DecompositionSystem system = make_system(size, size, 4, 1, 2e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{2e-5, 2e-5}, 5);
  const MultraModel model = random_model(4, 3, 2, 61);

  DecompositionParams params;
  params.beta1 = 4.0;
  params.beta2 = 3.0;
  params.gamma1_water = 0.1;
  params.gamma1_bone = 0.12;
  params.gamma2 = 0.09;

  const SparseCodeSet codes = sparse_code_and_cluster(direct_inversion(y, kAtten), model, params);
  const MaterialImagePair x = image_update(y, codes, model, params, system);

  SECTION("finite-difference directional derivatives vanish at the solution") {
    std::mt19937 rng(62);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double f0 = quadratic_cost_direct(x, y, codes, model, params, system);
    for (int trial = 0; trial < 20; ++trial) {
      MaterialImagePair dir = MaterialImagePair::zeros(size, size);
      for (auto& v : dir.water.values) v = gauss(rng);
      for (auto& v : dir.bone.values) v = gauss(rng);

      const double eps = 1e-5;
      auto shifted = [&](double t) {
        MaterialImagePair xs = x;
        for (std::size_t j = 0; j < xs.water.size(); ++j) {
          xs.water.values[j] += t * dir.water.values[j];
          xs.bone.values[j] += t * dir.bone.values[j];
        }
        return quadratic_cost_direct(xs, y, codes, model, params, system);
      };
      const double deriv_at_solution = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
      // reference slope: the same directional derivative away from the optimum
      const double deriv_away = (shifted(0.01 + eps) - shifted(0.01 - eps)) / (2.0 * eps);
      CHECK(std::abs(deriv_at_solution) <= 1e-6 * std::max(std::abs(deriv_away), f0));
    }
  }

  SECTION("matches an independent conjugate-gradient solve") {
    const auto coded = detail::build_coded_multra(codes, model, params);
    const MaterialImagePair cg = cg_image_solve(y, coded.backproj, coded.w_water,
                                                coded.w_bone, system);
    CHECK(max_abs_diff(x, cg) <= 1e-8 * std::max(1.0, max_abs(cg)));
  }
}

TEST_CASE("multra objective is non-increasing at every half-step") {
  const int size = 24;
  const MaterialImagePair truth = noisy_phantom_truth(size, 9);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 6);
  const MultraModel model = random_model(4, 3, 2, 71);

  DecompositionParams params;
  params.beta1 = 5.0;
  params.beta2 = 5.0;
  params.gamma1_water = params.gamma1_bone = 0.05;
  params.gamma2 = 0.04;

  MaterialImagePair x = direct_inversion(y, kAtten);
  SparseCodeSet codes = sparse_code_and_cluster(x, model, params);
  double prev = objective_p0(x, y, codes, model, params, system).total;
  for (int it = 0; it < 20; ++it) {
    x = image_update(y, codes, model, params, system);
    const double after_image = objective_p0(x, y, codes, model, params, system).total;
    REQUIRE(after_image <= prev + 1e-9 * std::max(1.0, std::abs(prev)));
    codes = sparse_code_and_cluster(x, model, params);
    const double after_codes = objective_p0(x, y, codes, model, params, system).total;
    REQUIRE(after_codes <= after_image + 1e-9 * std::max(1.0, std::abs(after_image)));
    prev = after_codes;
  }
}

TEST_CASE("multra trace is non-increasing over 500 iterations") {
  const int size = 24;
  const MaterialImagePair truth = noisy_phantom_truth(size, 10);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 7);
  const MultraModel model = random_model(4, 2, 2, 81);

  DecompositionParams params;
  params.beta1 = params.beta2 = 2.0;
  params.gamma1_water = params.gamma1_bone = 0.05;
  params.gamma2 = 0.04;
  params.iterations = 500;

  const DecomposeResult result =
      decompose_multra(y, model, params, system, direct_inversion(y, kAtten));
  CHECK(result.trace.size() == 501);
  CHECK(trace_non_increasing(result.trace));
}

TEST_CASE("huge gamma zeroes all codes and matches the pure quadratic solve") {
  const int size = 16;
  const MaterialImagePair truth = noisy_phantom_truth(size, 11);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 8);
  const MultraModel model = random_model(4, 2, 2, 91);

  DecompositionParams params;
  params.beta1 = params.beta2 = 3.0;
  params.gamma1_water = params.gamma1_bone = params.gamma2 = 1e6;
  params.iterations = 2;

  const DecomposeResult result =
      decompose_multra(y, model, params, system, direct_inversion(y, kAtten));
  CHECK(result.codes.codes.cwiseAbs().maxCoeff() == 0.0);

  // with z = 0 the subproblem is min fidelity + beta sum ||P_j x||^2
  const PatchGrid grid = patch_grid(system.patch, size, size);
  const Eigen::MatrixXd zero_targets =
      Eigen::MatrixXd::Zero(2 * system.patch.vector_size(), grid.count());
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(grid.count(), params.beta1);
  const MaterialImagePair cg = cg_image_solve(y, zero_targets, w, w, system);
  CHECK(max_abs_diff(result.images, cg) <= 1e-8 * std::max(1.0, max_abs(cg)));
}

TEST_CASE("cultra equals multra with the common model priced out") {
  const int size = 20;
  const MaterialImagePair truth = noisy_phantom_truth(size, 12);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 9);
  const MultraModel model = random_model(4, 3, 3, 101);

  CultraParams cultra;
  cultra.beta = 6.0;
  cultra.gamma = 0.05;
  cultra.iterations = 8;

  DecompositionParams multra;
  multra.beta1 = 1e12;  // noisy data: every common cost is strictly positive
  multra.beta2 = cultra.beta;
  multra.gamma1_water = multra.gamma1_bone = 0.05;
  multra.gamma2 = cultra.gamma;
  multra.iterations = cultra.iterations;

  const MaterialImagePair x0 = direct_inversion(y, kAtten);
  const DecomposeResult a = decompose_cultra(y, model.cross, cultra, system, x0);
  const DecomposeResult b = decompose_multra(y, model, multra, system, x0);
  CHECK(max_abs_diff(a.images, b.images) == 0.0);
  for (std::size_t j = 0; j < a.codes.labels.size(); ++j) {
    CHECK(b.codes.labels[j].model == 2);
    CHECK(a.codes.labels[j].k_cross == b.codes.labels[j].k_cross);
  }
}

TEST_CASE("cultra with a single class stays monotone") {
  const int size = 20;
  const MaterialImagePair truth = noisy_phantom_truth(size, 13);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 10);

  TransformUnion cross;
  cross.kind = TransformUnion::Kind::cross_3d;
  cross.transforms = {UnitaryTransform{random_rotation(32, 111)}};

  CultraParams params;
  params.beta = 4.0;
  params.gamma = 0.05;
  params.iterations = 60;
  const DecomposeResult result =
      decompose_cultra(y, cross, params, system, direct_inversion(y, kAtten));
  CHECK(trace_non_increasing(result.trace));
}

TEST_CASE("cultra smoothing on clean data stays monotone with a large gamma") {
  const int size = 20;
  const MaterialImagePair truth = noisy_phantom_truth(size, 14);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{0.0, 0.0}, 11);

  TransformUnion cross;
  cross.kind = TransformUnion::Kind::cross_3d;
  for (int k = 0; k < 2; ++k)
    cross.transforms.push_back(UnitaryTransform{random_rotation(32, 121 + k)});

  CultraParams params;
  params.beta = 10.0;
  params.gamma = 5.0;  // far above any coefficient: pure quadratic smoothing
  params.iterations = 40;
  const DecomposeResult result =
      decompose_cultra(y, cross, params, system, direct_inversion(y, kAtten));
  CHECK(trace_non_increasing(result.trace));
}

TEST_CASE("st reduction: free per-half clustering agrees on planted tiled data") {
  // non-overlapping tiles, each patch exactly sparse under its material's
  // planted transform, so the restricted mixed-model argmin always picks the
  // material's own transform and the fixed-clustering solver must coincide
  const int side = 4, m = 16, size = 32;
  const Eigen::MatrixXd qw = random_rotation(m, 131);
  const Eigen::MatrixXd qb = random_rotation(m, 132);

  std::mt19937 rng(133);
  std::uniform_real_distribution<double> mag(0.8, 1.5);
  Eigen::VectorXd sw = Eigen::VectorXd::Zero(m), sb = Eigen::VectorXd::Zero(m);
  sw(2) = mag(rng);
  sw(9) = -mag(rng);
  sb(5) = mag(rng);
  sb(11) = mag(rng);
  const Eigen::VectorXd tile_w = qw.transpose() * sw;
  const Eigen::VectorXd tile_b = qb.transpose() * sb;

  MaterialImagePair truth = MaterialImagePair::zeros(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      truth.water.at(x, y) = tile_w((y % side) * side + (x % side));
      truth.bone.at(x, y) = tile_b((y % side) * side + (x % side));
    }

  DecompositionSystem system = make_system(size, size, side, side, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-8, 1e-8}, 12);

  StParams params;
  params.beta_water = 4.0;
  params.beta_bone = 6.0;
  params.gamma_water = 0.3;
  params.gamma_bone = 0.25;
  params.iterations = 6;

  const DecomposeResult st = decompose_st(y, UnitaryTransform{qw}, UnitaryTransform{qb},
                                          params, system, truth);

  // oracle: restricted mixed model with the union {qw, qb} per half
  MaterialImagePair x = truth;
  const PatchGrid grid = patch_grid(system.patch, size, size);
  for (int it = 0; it < params.iterations; ++it) {
    const Eigen::MatrixXd patches = extract_patches(x, system.patch);
    detail::CodedPatches coded;
    coded.backproj.resize(2 * m, grid.count());
    coded.w_water = Eigen::VectorXd::Constant(grid.count(), params.beta_water);
    coded.w_bone = Eigen::VectorXd::Constant(grid.count(), params.beta_bone);
    coded.pen_water = Eigen::VectorXd::Zero(grid.count());
    coded.pen_bone = Eigen::VectorXd::Zero(grid.count());
    for (Eigen::Index j = 0; j < patches.cols(); ++j) {
      const Eigen::VectorXd uw0 = qw * patches.col(j).head(m);
      const Eigen::VectorXd uw1 = qb * patches.col(j).head(m);
      REQUIRE(sparsify_cost(uw0, params.gamma_water) <
              sparsify_cost(uw1, params.gamma_water));
      const Eigen::VectorXd ub0 = qw * patches.col(j).tail(m);
      const Eigen::VectorXd ub1 = qb * patches.col(j).tail(m);
      REQUIRE(sparsify_cost(ub1, params.gamma_bone) < sparsify_cost(ub0, params.gamma_bone));
      coded.backproj.col(j).head(m) = qw.transpose() * hard_threshold(uw0, params.gamma_water);
      coded.backproj.col(j).tail(m) = qb.transpose() * hard_threshold(ub1, params.gamma_bone);
    }
    x = detail::image_update_core(y, coded, system);
  }
  CHECK(max_abs_diff(st.images, x) <= 1e-12);
}

TEST_CASE("st trace is non-increasing over 500 iterations") {
  const int size = 20;
  const MaterialImagePair truth = noisy_phantom_truth(size, 15);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 13);

  StParams params;
  params.beta_water = 3.0;
  params.beta_bone = 4.0;
  params.gamma_water = 0.04;
  params.gamma_bone = 0.05;
  params.iterations = 500;
  const DecomposeResult result =
      decompose_st(y, UnitaryTransform{random_rotation(16, 141)},
                   UnitaryTransform{random_rotation(16, 142)}, params, system,
                   direct_inversion(y, kAtten));
  CHECK(result.trace.size() == 501);
  CHECK(trace_non_increasing(result.trace));
}

TEST_CASE("st with identity transforms and huge gamma matches the quadratic solve") {
  const int size = 16;
  const MaterialImagePair truth = noisy_phantom_truth(size, 16);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);
  const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 14);

  StParams params;
  params.beta_water = 2.0;
  params.beta_bone = 5.0;
  params.gamma_water = params.gamma_bone = 1e6;
  params.iterations = 2;
  const UnitaryTransform id{Eigen::MatrixXd::Identity(16, 16)};
  const DecomposeResult result =
      decompose_st(y, id, id, params, system, direct_inversion(y, kAtten));
  CHECK(result.codes.codes.cwiseAbs().maxCoeff() == 0.0);

  const PatchGrid grid = patch_grid(system.patch, size, size);
  const Eigen::MatrixXd zero_targets = Eigen::MatrixXd::Zero(32, grid.count());
  const MaterialImagePair cg = cg_image_solve(
      y, zero_targets, Eigen::VectorXd::Constant(grid.count(), params.beta_water),
      Eigen::VectorXd::Constant(grid.count(), params.beta_bone), system);
  CHECK(max_abs_diff(result.images, cg) <= 1e-8 * std::max(1.0, max_abs(cg)));
}

TEST_CASE("edge-preserving potential and derivative") {
  CHECK(ep_potential(0.0, 0.01) == 0.0);
  CHECK(ep_potential_derivative(0.0, 0.01) == 0.0);

  for (double delta : {0.01, 0.02, 1.0}) {
    const double t = delta * 1e-4;
    CHECK(ep_potential(t, delta) / (0.5 * t * t) == Catch::Approx(1.0).margin(1e-6));

    for (int i = 0; i < 20; ++i) {
      const double tt = delta * std::pow(10.0, -3.0 + 4.0 * i / 19.0);
      const double h = 1e-5 * delta;
      const double fd = (ep_potential(tt + h, delta) - ep_potential(tt - h, delta)) / (2.0 * h);
      CHECK(ep_potential_derivative(tt, delta) == Catch::Approx(fd).epsilon(1e-8));
    }
  }
}

TEST_CASE("ep decomposition limits and monotonicity") {
  const int size = 24;
  const MaterialImagePair truth = noisy_phantom_truth(size, 17);
  const DecompositionSystem system = make_system(size, size, 4, 1, 1e-5);

  SECTION("beta -> 0 leaves direct inversion untouched") {
    const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 15);
    EpParams ep;
    ep.beta_water = ep.beta_bone = 1e-12;
    ep.iterations = 20;
    const MaterialImagePair x0 = direct_inversion(y, kAtten);
    const EpResult result = decompose_ep(y, ep, system, x0);
    CHECK(max_abs_diff(result.images, x0) <= 1e-6);
    CHECK(trace_non_increasing(result.trace));
  }

  SECTION("constant initialization on constant noiseless data is a fixed point") {
    MaterialImagePair constant = MaterialImagePair::zeros(size, size);
    for (auto& v : constant.water.values) v = 0.7;
    for (auto& v : constant.bone.values) v = 0.3;
    const AttenuationPair y = simulate_attenuation(constant, kAtten, NoiseWeights{0.0, 0.0}, 16);
    EpParams ep;
    ep.iterations = 5;
    const EpResult result = decompose_ep(y, ep, system, constant);
    CHECK(max_abs_diff(result.images, constant) <= 1e-12);
  }

  SECTION("trace is non-increasing over 500 iterations") {
    const AttenuationPair y = simulate_attenuation(truth, kAtten, NoiseWeights{1e-5, 1e-5}, 17);
    EpParams ep;
    ep.iterations = 500;
    const EpResult result = decompose_ep(y, ep, system, direct_inversion(y, kAtten));
    CHECK(result.trace.size() == 501);
    CHECK(trace_non_increasing(result.trace));
  }
}

TEST_CASE("pixel cluster map votes") {
  SECTION("uniform labels give a uniform map") {
    const int size = 12;
    SparseCodeSet codes;
    codes.patch = PatchConfig{4, 1};
    codes.image_width = codes.image_height = size;
    const PatchGrid grid = patch_grid(codes.patch, size, size);
    codes.labels.assign(static_cast<std::size_t>(grid.count()), PatchLabel{2, 0, 0, 3});
    codes.codes = Eigen::MatrixXd::Zero(32, grid.count());
    const ClusterMap map = pixel_cluster_map(codes, codes.patch, size, size);
    for (const auto& label : map.labels) {
      CHECK(label.model == 2);
      CHECK(label.k_cross == 3);
    }
  }

  SECTION("hand-built three-patch overlap resolves by majority") {
    // 5x3 image, side 3: three patches in a row all cover pixel (2, 1)
    SparseCodeSet codes;
    codes.patch = PatchConfig{3, 1};
    codes.image_width = 5;
    codes.image_height = 3;
    const PatchLabel a{1, 0, 0, 0};
    const PatchLabel b{2, 0, 0, 1};
    codes.labels = {a, a, b};
    codes.codes = Eigen::MatrixXd::Zero(18, 3);
    const ClusterMap map = pixel_cluster_map(codes, codes.patch, 5, 3);
    CHECK(map.at(2, 1) == a);
    // pixel (3,1) is covered by patches 1 and 2 only: tie, lowest label wins
    CHECK(map.at(3, 1) == a);
    // pixel (4,1) only by patch 2
    CHECK(map.at(4, 1) == b);
  }
}

TEST_CASE("cross-model labels concentrate on the material boundary") {
  // left half water, right half bone, exactly complementary edges
  const int size = 48, side = 8;
  MaterialImagePair truth = MaterialImagePair::zeros(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      truth.water.at(x, y) = x < size / 2 ? 1.0 : 0.0;
      truth.bone.at(x, y) = x < size / 2 ? 0.0 : 1.92;
    }

  LearningParams common;
  common.num_classes = 2;
  common.eta = 0.15;
  common.iterations = 40;
  common.seed = 151;
  LearningParams cross = common;
  cross.eta = 0.12;
  const MultraTrainResult trained =
      learn_multra_model({truth}, PatchConfig{side, 1}, common, cross, 2);

  DecompositionParams params;
  params.beta1 = params.beta2 = 1.0;
  params.gamma1_water = params.gamma1_bone = params.gamma2 = 0.1;
  const SparseCodeSet codes = sparse_code_and_cluster(truth, trained.model, params);

  const PatchGrid grid = patch_grid(PatchConfig{side, 1}, size, size);
  int band_cross = 0, band_total = 0, outside_cross = 0, outside_total = 0;
  for (int ky = 0; ky < grid.ny; ++ky)
    for (int kx = 0; kx < grid.nx; ++kx) {
      const bool straddles = kx < size / 2 && kx + side > size / 2;
      const bool is_cross =
          codes.labels[static_cast<std::size_t>(ky) * grid.nx + kx].model == 2;
      (straddles ? band_total : outside_total) += 1;
      if (is_cross) (straddles ? band_cross : outside_cross) += 1;
    }
  REQUIRE(band_total > 0);
  REQUIRE(outside_total > 0);
  const double band_rate = double(band_cross) / band_total;
  const double outside_rate = double(outside_cross) / outside_total;
  INFO("band " << band_rate << " outside " << outside_rate);
  CHECK(band_rate > outside_rate);
  CHECK(band_rate > 0.5);
}

TEST_CASE("per-iteration coding work scales about linearly with the patch count") {
  const MultraModel model = random_model(8, 3, 2, 161);
  DecompositionParams params;
  params.gamma1_water = params.gamma1_bone = 0.1;
  params.gamma2 = 0.08;

  auto time_coding = [&](int size) {
    const MaterialImagePair truth = noisy_phantom_truth(size, 18);
    double best = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < 3; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      const SparseCodeSet codes = sparse_code_and_cluster(truth, model, params);
      const auto stop = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(stop - start).count() +
                                1e-9 * codes.count());
    }
    return best;
  };

  const double t_small = time_coding(64);
  const double t_large = time_coding(90);  // ~2x the pixel (and patch) count
  INFO("64: " << t_small << "s, 90: " << t_large << "s");
  CHECK(t_large <= 2.75 * t_small);
}
