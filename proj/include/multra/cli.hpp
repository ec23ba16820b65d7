#pragma once

// Batch command-line front end. Every subcommand reads a single flat
// "key = value" config file; all numeric defaults follow the published
// protocol settings so a default run needs only paths. Exit codes:
// 0 success, 1 usage, 2 I/O, 3 numerical failure.

#include "multra/decompose.hpp"
#include "multra/io.hpp"
#include "multra/learning.hpp"
#include "multra/metrics.hpp"
#include "multra/simulate.hpp"
#include "multra/threading.hpp"
#include "multra/types.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace multra::cli {

// Nominal water/bone mass attenuation coefficients (cm^2/g) at typical
// high/low effective energies; overridable via phi_* config keys.
inline constexpr double kDefaultPhiWaterHigh = 0.171;
inline constexpr double kDefaultPhiBoneHigh = 0.252;
inline constexpr double kDefaultPhiWaterLow = 0.223;
inline constexpr double kDefaultPhiBoneLow = 0.480;

namespace detail {

inline MassAttenuationMatrix atten_from_config(const io::KeyValueFile& cfg) {
  MassAttenuationMatrix a;
  a.phi_water_high = cfg.get_double("phi_water_high", kDefaultPhiWaterHigh);
  a.phi_bone_high = cfg.get_double("phi_bone_high", kDefaultPhiBoneHigh);
  a.phi_water_low = cfg.get_double("phi_water_low", kDefaultPhiWaterLow);
  a.phi_bone_low = cfg.get_double("phi_bone_low", kDefaultPhiBoneLow);
  a.validate();
  return a;
}

inline void require_readable(const std::string& path) {
  if (!std::filesystem::exists(path)) throw io_error("input file does not exist: " + path);
}

inline ImageGrid load_image(const std::string& path) {
  require_readable(path);
  require_readable(path + ".hdr");
  return io::read_image(path);
}

inline RoiMask roi_from_config(const io::KeyValueFile& cfg, int width, int height) {
  const std::string kind = cfg.get_string("roi", "disk");
  if (kind == "full") return full_mask(width, height);
  if (kind != "disk") throw usage_error("config: roi must be 'disk' or 'full'");
  const double radius =
      cfg.get_double("roi_radius", 0.47 * std::min(width, height));
  const double cx = cfg.get_double("roi_cx", 0.5 * width);
  const double cy = cfg.get_double("roi_cy", 0.5 * height);
  return disk_mask(width, height, cx, cy, radius);
}

inline Shape parse_shape(const std::string& text) {
  std::istringstream in(text);
  std::string kind, material;
  Shape shape;
  if (!(in >> kind >> material >> shape.density >> shape.cx >> shape.cy >> shape.rx >>
        shape.ry))
    throw usage_error(
        "config: shape must be 'ellipse|rect material density cx cy rx ry [angle] [jitter]': " +
        text);
  if (kind == "ellipse")
    shape.kind = Shape::Kind::ellipse;
  else if (kind == "rect")
    shape.kind = Shape::Kind::rectangle;
  else
    throw usage_error("config: unknown shape kind: " + kind);
  shape.material = material_from_string(material);
  in >> shape.angle_deg;
  in >> shape.density_jitter;
  return shape;
}

}  // namespace detail

inline void cmd_train(const io::KeyValueFile& cfg, std::ostream& out) {
  const std::string mode = cfg.get_string("mode", "multra");
  if (mode != "multra" && mode != "st")
    throw usage_error("config: mode must be 'multra' or 'st'");

  const int pairs = cfg.get_int("pairs");
  if (pairs < 1) throw usage_error("config: pairs must be at least 1");
  std::vector<MaterialImagePair> training;
  for (int i = 1; i <= pairs; ++i) {
    const std::string water = cfg.get_string("water_" + std::to_string(i));
    const std::string bone = cfg.get_string("bone_" + std::to_string(i));
    MaterialImagePair pair{detail::load_image(water), detail::load_image(bone)};
    pair.validate();
    training.push_back(std::move(pair));
  }

  PatchConfig patch{cfg.get_int("patch_side", 8), cfg.get_int("stride", 1)};
  patch.validate();

  LearningParams base;
  base.iterations = cfg.get_int("iterations", 2000);
  base.seed = cfg.get_uint64("seed", 0);
  const std::string init = cfg.get_string("init", "dct_rotations");
  if (init == "dct_rotations")
    base.init = LearningParams::Init::dct_rotations;
  else if (init == "random_orthonormal")
    base.init = LearningParams::Init::random_orthonormal;
  else
    throw usage_error("config: init must be 'dct_rotations' or 'random_orthonormal'");
  const int subsample = cfg.get_int("subsample", 1);
  if (subsample < 1) throw usage_error("config: subsample must be at least 1");

  const std::string prefix = cfg.get_string("out");

  if (mode == "multra") {
    LearningParams common = base;
    common.num_classes = cfg.get_int("k_common", 15);
    common.eta = cfg.get_double("eta_common", 0.21);
    LearningParams cross = base;
    cross.num_classes = cfg.get_int("k_cross", 10);
    cross.eta = cfg.get_double("eta_cross", 0.17);
    cross.seed = multra::detail::mix_seed(base.seed, 0xc105eULL);

    const MultraTrainResult result =
        learn_multra_model(training, patch, common, cross, subsample);
    io::write_multra_model(result.model, {common.eta, common.seed, patch.side, patch.stride},
                           {cross.eta, cross.seed, patch.side, patch.stride}, prefix);
    out << "model_common = " << prefix << ".common.tfm\n";
    out << "model_cross = " << prefix << ".cross.tfm\n";
    out << "final_objective_common = "
        << io::KeyValueFile::format_double(result.common_objective.back()) << "\n";
    out << "final_objective_cross = "
        << io::KeyValueFile::format_double(result.cross_objective.back()) << "\n";
    return;
  }

  // st: one single-transform union per material
  LearningParams water_params = base;
  water_params.num_classes = 1;
  water_params.eta = cfg.get_double("eta_water", 0.12);
  LearningParams bone_params = base;
  bone_params.num_classes = 1;
  bone_params.eta = cfg.get_double("eta_bone", 0.15);
  bone_params.seed = multra::detail::mix_seed(base.seed, 0xb0e5ULL);

  const int m = patch.vector_size();
  Eigen::MatrixXd water_data(m, 0), bone_data(m, 0);
  for (const auto& pair : training) {
    const Eigen::MatrixXd w =
        multra::detail::subsample_columns(extract_patches(pair.water, patch), subsample);
    const Eigen::MatrixXd b =
        multra::detail::subsample_columns(extract_patches(pair.bone, patch), subsample);
    water_data.conservativeResize(m, water_data.cols() + w.cols());
    water_data.rightCols(w.cols()) = w;
    bone_data.conservativeResize(m, bone_data.cols() + b.cols());
    bone_data.rightCols(b.cols()) = b;
  }

  const LearnResult water_result =
      learn_union(water_data, water_params, TransformUnion::Kind::common_2d, patch.side);
  const LearnResult bone_result =
      learn_union(bone_data, bone_params, TransformUnion::Kind::common_2d, patch.side);
  io::write_transform_union(water_result.transforms,
                            {water_params.eta, water_params.seed, patch.side, patch.stride},
                            prefix + ".water.tfm");
  io::write_transform_union(bone_result.transforms,
                            {bone_params.eta, bone_params.seed, patch.side, patch.stride},
                            prefix + ".bone.tfm");
  out << "model_water = " << prefix << ".water.tfm\n";
  out << "model_bone = " << prefix << ".bone.tfm\n";
  out << "final_objective_water = "
      << io::KeyValueFile::format_double(water_result.objective.back()) << "\n";
  out << "final_objective_bone = "
      << io::KeyValueFile::format_double(bone_result.objective.back()) << "\n";
}

inline void cmd_simulate(const io::KeyValueFile& cfg, bool force, std::ostream& out) {
  const int width = cfg.get_int("width");
  const int height = cfg.get_int("height");
  const std::uint64_t seed = cfg.get_uint64("seed", 0);
  const std::string prefix = cfg.get_string("out");

  const MassAttenuationMatrix atten = detail::atten_from_config(cfg);
  NoiseWeights noise;
  noise.sigma2_high = cfg.get_double("sigma2_high", 0.0);
  noise.sigma2_low = cfg.get_double("sigma2_low", 0.0);
  noise.validate_nonnegative();

  PhantomScene scene;
  const std::string scene_kind = cfg.get_string("scene", "default");
  if (scene_kind == "default") {
    scene = default_scene(width, height);
  } else if (scene_kind == "shapes") {
    const int count = cfg.get_int("shapes");
    for (int i = 1; i <= count; ++i)
      scene.shapes.push_back(detail::parse_shape(cfg.get_string("shape_" + std::to_string(i))));
  } else {
    throw usage_error("config: scene must be 'default' or 'shapes'");
  }

  const std::vector<std::string> outputs = {
      prefix + ".true_water.img", prefix + ".true_bone.img", prefix + ".atten_high.img",
      prefix + ".atten_low.img", prefix + ".manifest"};
  if (!force && !cfg.get_int("force", 0))
    for (const auto& path : outputs)
      if (std::filesystem::exists(path))
        throw io_error("output exists (use --force to overwrite): " + path);

  std::vector<std::string> warnings;
  MaterialImagePair truth = generate_phantom(scene, width, height, seed, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  const AttenuationPair atten_images = simulate_attenuation(truth, atten, noise, seed);

  io::write_image(truth.water, outputs[0]);
  io::write_image(truth.bone, outputs[1]);
  io::write_image(atten_images.high, outputs[2]);
  io::write_image(atten_images.low, outputs[3]);

  io::KeyValueFile manifest;
  manifest.set("width", width);
  manifest.set("height", height);
  manifest.set("seed", seed);
  manifest.set("scene", scene_kind);
  manifest.set("shapes", static_cast<int>(scene.shapes.size()));
  manifest.set("phi_water_high", atten.phi_water_high);
  manifest.set("phi_bone_high", atten.phi_bone_high);
  manifest.set("phi_water_low", atten.phi_water_low);
  manifest.set("phi_bone_low", atten.phi_bone_low);
  manifest.set("sigma2_high", noise.sigma2_high);
  manifest.set("sigma2_low", noise.sigma2_low);
  manifest.set("true_water", outputs[0]);
  manifest.set("true_bone", outputs[1]);
  manifest.set("atten_high", outputs[2]);
  manifest.set("atten_low", outputs[3]);
  manifest.save(outputs[4]);

  for (const auto& path : outputs) out << "wrote " << path << "\n";
}

inline void cmd_decompose(const io::KeyValueFile& cfg, std::ostream& out) {
  const std::string method = cfg.get_string("method");
  const bool is_direct = method == "direct";
  const bool is_ep = method == "ep";
  const bool is_st = method == "st";
  const bool is_cultra = method == "cultra";
  const bool is_multra = method == "multra";
  if (!is_direct && !is_ep && !is_st && !is_cultra && !is_multra)
    throw usage_error("config: method must be one of direct|ep|st|cultra|multra: " + method);

  AttenuationPair y{detail::load_image(cfg.get_string("atten_high")),
                    detail::load_image(cfg.get_string("atten_low"))};
  y.high.unit = PixelUnit::attenuation_per_cm;
  y.low.unit = PixelUnit::attenuation_per_cm;
  y.validate();

  const std::string prefix = cfg.get_string("out");
  const MassAttenuationMatrix atten = detail::atten_from_config(cfg);

  auto write_images = [&](const MaterialImagePair& x) {
    io::write_image(x.water, prefix + ".water.img");
    io::write_image(x.bone, prefix + ".bone.img");
    out << "wrote " << prefix << ".water.img\n";
    out << "wrote " << prefix << ".bone.img\n";
  };

  if (is_direct) {
    write_images(direct_inversion(y, atten));
    return;
  }

  DecompositionSystem system;
  system.atten = atten;
  system.noise.sigma2_high = cfg.get_double("sigma2_high");
  system.noise.sigma2_low = cfg.get_double("sigma2_low");
  system.patch = PatchConfig{cfg.get_int("patch_side", 8), cfg.get_int("stride", 1)};
  system.width = y.width();
  system.height = y.height();

  EpParams ep;
  ep.beta_water = cfg.get_double("ep_beta_water", ep.beta_water);
  ep.beta_bone = cfg.get_double("ep_beta_bone", ep.beta_bone);
  ep.delta_water = cfg.get_double("ep_delta_water", ep.delta_water);
  ep.delta_bone = cfg.get_double("ep_delta_bone", ep.delta_bone);
  ep.iterations = cfg.get_int("ep_iterations", ep.iterations);

  // Initialization chain: direct inversion seeds the edge-preserving solver,
  // whose output seeds the learned-transform solvers, unless explicit init
  // images are supplied.
  MaterialImagePair x_init;
  if (cfg.has("init_water") && cfg.has("init_bone")) {
    x_init = MaterialImagePair{detail::load_image(cfg.get_string("init_water")),
                               detail::load_image(cfg.get_string("init_bone"))};
    x_init.validate();
  } else {
    x_init = direct_inversion(y, atten);
    if (!is_ep) x_init = decompose_ep(y, ep, system, x_init).images;
  }

  auto write_trace = [&](const ObjectiveTrace& trace) {
    io::write_trace(trace, prefix + ".trace.csv");
    out << "wrote " << prefix << ".trace.csv\n";
    out << "final_objective = "
        << io::KeyValueFile::format_double(trace.entries.back().total) << "\n";
  };

  if (is_ep) {
    const EpResult result = decompose_ep(y, ep, system, x_init);
    write_images(result.images);
    write_trace(result.trace);
    return;
  }

  DecomposeResult result;
  const MultraModel* model_for_map = nullptr;
  MultraModel model;
  if (is_multra) {
    model = io::read_multra_model(cfg.get_string("model_common"), cfg.get_string("model_cross"));
    if (model.patch.side != system.patch.side || model.patch.stride != system.patch.stride)
      throw usage_error("config: patch geometry differs from the model file");
    DecompositionParams params;
    params.beta1 = cfg.get_double("beta1", params.beta1);
    params.beta2 = cfg.get_double("beta2", params.beta2);
    params.gamma1_water = cfg.get_double("gamma1_water", cfg.get_double("gamma1", 0.13));
    params.gamma1_bone = cfg.get_double("gamma1_bone", cfg.get_double("gamma1", 0.13));
    params.gamma2 = cfg.get_double("gamma2", params.gamma2);
    params.iterations = cfg.get_int("iterations", params.iterations);
    result = decompose_multra(y, model, params, system, x_init);
    model_for_map = &model;
  } else if (is_cultra) {
    auto [cross, meta] = io::read_transform_union(cfg.get_string("model_cross"));
    if (cross.kind != TransformUnion::Kind::cross_3d)
      throw usage_error("config: cultra needs a cross_3d model file");
    if (meta.patch_side != system.patch.side || meta.stride != system.patch.stride)
      throw usage_error("config: patch geometry differs from the model file");
    CultraParams params;
    params.beta = cfg.get_double("beta", params.beta);
    params.gamma = cfg.get_double("gamma", params.gamma);
    params.iterations = cfg.get_int("iterations", params.iterations);
    result = decompose_cultra(y, cross, params, system, x_init);
  } else {
    auto [water_union, wmeta] = io::read_transform_union(cfg.get_string("model_water"));
    auto [bone_union, bmeta] = io::read_transform_union(cfg.get_string("model_bone"));
    if (water_union.size() != 1 || bone_union.size() != 1)
      throw usage_error("config: st needs single-transform model files");
    if (wmeta.patch_side != system.patch.side || bmeta.patch_side != system.patch.side)
      throw usage_error("config: patch geometry differs from the model files");
    StParams params;
    params.beta_water = cfg.get_double("beta_water", params.beta_water);
    params.beta_bone = cfg.get_double("beta_bone", params.beta_bone);
    params.gamma_water = cfg.get_double("gamma_water", params.gamma_water);
    params.gamma_bone = cfg.get_double("gamma_bone", params.gamma_bone);
    params.iterations = cfg.get_int("iterations", params.iterations);
    result = decompose_st(y, water_union.transforms[0], bone_union.transforms[0], params,
                          system, x_init);
  }

  write_images(result.images);
  write_trace(result.trace);

  if (cfg.get_int("cluster_map", 0)) {
    const ClusterMap map =
        pixel_cluster_map(result.codes, system.patch, system.width, system.height);
    const int k_common = model_for_map ? model_for_map->common.size() : 0;
    ImageGrid r_map = ImageGrid::zeros(map.width, map.height, PixelUnit::dimensionless);
    ImageGrid k_map = ImageGrid::zeros(map.width, map.height, PixelUnit::dimensionless);
    for (std::size_t j = 0; j < map.labels.size(); ++j) {
      const PatchLabel& label = map.labels[j];
      r_map.values[j] = label.model;
      k_map.values[j] = label.model == 1
                            ? label.k_water * std::max(1, k_common) + label.k_bone
                            : label.k_cross;
    }
    io::write_image(r_map, prefix + ".cluster_r.img");
    io::write_image(k_map, prefix + ".cluster_k.img");
    out << "wrote " << prefix << ".cluster_r.img\n";
    out << "wrote " << prefix << ".cluster_k.img\n";
  }
}

inline void cmd_eval(const io::KeyValueFile& cfg, std::ostream& out) {
  const std::string metric = cfg.get_string("metric");
  if (metric == "rmse") {
    const ImageGrid est_water = detail::load_image(cfg.get_string("est_water"));
    const ImageGrid truth_water = detail::load_image(cfg.get_string("truth_water"));
    const RoiMask roi = detail::roi_from_config(cfg, truth_water.width, truth_water.height);
    out << "roi_pixels = " << roi.count() << "\n";
    out << "rmse_water = " << io::KeyValueFile::format_double(rmse(est_water, truth_water, roi))
        << "\n";
    if (cfg.has("est_bone") && cfg.has("truth_bone")) {
      const ImageGrid est_bone = detail::load_image(cfg.get_string("est_bone"));
      const ImageGrid truth_bone = detail::load_image(cfg.get_string("truth_bone"));
      out << "rmse_bone = " << io::KeyValueFile::format_double(rmse(est_bone, truth_bone, roi))
          << "\n";
    }
    return;
  }
  if (metric != "nps") throw usage_error("config: metric must be 'rmse' or 'nps'");

  const ImageGrid est = detail::load_image(cfg.get_string("est"));
  const ImageGrid truth = detail::load_image(cfg.get_string("truth"));
  if (est.width != truth.width || est.height != truth.height)
    throw dimension_error("eval: estimate/truth dimensions differ");
  if (!cfg.has("nps_x") || !cfg.has("nps_y"))
    throw usage_error("config: nps requires nps_x and nps_y block origin keys");

  ImageGrid error = est;
  for (std::size_t j = 0; j < error.values.size(); ++j) error.values[j] -= truth.values[j];

  const int size = cfg.get_int("nps_size", 30);
  const Eigen::MatrixXd spectrum = nps(error, cfg.get_int("nps_x"), cfg.get_int("nps_y"), size);
  out << "nps_sum = " << io::KeyValueFile::format_double(spectrum.sum()) << "\n";
  out << "nps_max = " << io::KeyValueFile::format_double(spectrum.maxCoeff()) << "\n";

  if (cfg.get_int("parseval_check", 0)) {
    // recompute sum(f^2) of the zero-mean block independently
    const int x0 = cfg.get_int("nps_x"), y0 = cfg.get_int("nps_y");
    double mean = 0.0;
    for (int yy = 0; yy < size; ++yy)
      for (int xx = 0; xx < size; ++xx) mean += error.at(x0 + xx, y0 + yy);
    mean /= size * size;
    double ssq = 0.0;
    for (int yy = 0; yy < size; ++yy)
      for (int xx = 0; xx < size; ++xx) {
        const double v = error.at(x0 + xx, y0 + yy) - mean;
        ssq += v * v;
      }
    const double lhs = spectrum.sum();
    const double rhs = static_cast<double>(size) * size * ssq;
    const double rel = std::abs(lhs - rhs) / std::max(1e-300, std::abs(rhs));
    out << "parseval_lhs = " << io::KeyValueFile::format_double(lhs) << "\n";
    out << "parseval_rhs = " << io::KeyValueFile::format_double(rhs) << "\n";
    out << "parseval_ok = " << (rel <= 1e-9 ? 1 : 0) << "\n";
  }

  if (cfg.has("out")) {
    ImageGrid img = ImageGrid::zeros(size, size, PixelUnit::dimensionless);
    for (int yy = 0; yy < size; ++yy)
      for (int xx = 0; xx < size; ++xx) img.at(xx, yy) = spectrum(yy, xx);
    io::write_image(img, cfg.get_string("out"));
    out << "wrote " << cfg.get_string("out") << "\n";
  }
}

inline void cmd_cluster_map(const io::KeyValueFile& cfg, std::ostream& out) {
  MaterialImagePair x{detail::load_image(cfg.get_string("water")),
                      detail::load_image(cfg.get_string("bone"))};
  x.validate();
  const MultraModel model =
      io::read_multra_model(cfg.get_string("model_common"), cfg.get_string("model_cross"));

  DecompositionParams params;
  params.beta1 = cfg.get_double("beta1", params.beta1);
  params.beta2 = cfg.get_double("beta2", params.beta2);
  params.gamma1_water = cfg.get_double("gamma1_water", cfg.get_double("gamma1", 0.13));
  params.gamma1_bone = cfg.get_double("gamma1_bone", cfg.get_double("gamma1", 0.13));
  params.gamma2 = cfg.get_double("gamma2", params.gamma2);

  const SparseCodeSet codes = sparse_code_and_cluster(x, model, params);
  const ClusterMap map = pixel_cluster_map(codes, model.patch, x.width(), x.height());

  const std::string prefix = cfg.get_string("out");
  ImageGrid r_map = ImageGrid::zeros(map.width, map.height, PixelUnit::dimensionless);
  ImageGrid k_map = ImageGrid::zeros(map.width, map.height, PixelUnit::dimensionless);
  for (std::size_t j = 0; j < map.labels.size(); ++j) {
    const PatchLabel& label = map.labels[j];
    r_map.values[j] = label.model;
    k_map.values[j] = label.model == 1 ? label.k_water * model.common.size() + label.k_bone
                                       : label.k_cross;
  }
  io::write_image(r_map, prefix + ".cluster_r.img");
  io::write_image(k_map, prefix + ".cluster_k.img");
  out << "wrote " << prefix << ".cluster_r.img\n";
  out << "wrote " << prefix << ".cluster_k.img\n";
}

// Parses arguments (without the program name) and dispatches; returns the
// process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"image-domain dual-energy CT material decomposition toolkit"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (default: keep current)");
  bool force = false;

  std::string config_path;
  CLI::App* train = app.add_subcommand("train", "learn sparsifying transform models");
  CLI::App* simulate = app.add_subcommand("simulate", "generate a phantom and noisy attenuation data");
  CLI::App* decompose = app.add_subcommand("decompose", "run a material decomposition method");
  CLI::App* eval = app.add_subcommand("eval", "compute RMSE or NPS metrics");
  CLI::App* cluster_map = app.add_subcommand("cluster-map", "pixel-level cluster map from a decomposition");
  for (CLI::App* sub : {train, simulate, decompose, eval, cluster_map})
    sub->add_option("config", config_path, "flat key = value config file")->required();
  simulate->add_flag("--force", force, "overwrite existing outputs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (threads > 0) threading::set_thread_count(threads);
    detail::require_readable(config_path);
    const io::KeyValueFile cfg = io::KeyValueFile::load(config_path);
    if (train->parsed()) cmd_train(cfg, out);
    if (simulate->parsed()) cmd_simulate(cfg, force, out);
    if (decompose->parsed()) cmd_decompose(cfg, out);
    if (eval->parsed()) cmd_eval(cfg, out);
    if (cluster_map->parsed()) cmd_cluster_map(cfg, out);
    return 0;
  } catch (const usage_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const io_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const numerical_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace multra::cli
