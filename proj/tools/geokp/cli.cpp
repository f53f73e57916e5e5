// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "geokp/geodesy.hpp"
#include "geokp/metrics.hpp"
#include "geokp/nnet.hpp"
#include "geokp/parallel.hpp"
#include "geokp/pcloud.hpp"
#include "geokp/synth.hpp"
#include "geokp/trainer.hpp"

namespace geokp::cli {

namespace {

namespace fs = std::filesystem;

// subcommands are idempotent with respect to existing outputs
bool skip_existing(const fs::path& target, bool force) {
  if (force || !fs::exists(target)) return false;
  std::cout << target.string() << " exists, skipping (use --force to overwrite)\n";
  return true;
}

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03d.xyz", index);
  return buf;
}

void cmd_synth(const std::string& generator, int frames, int points, double amplitude,
               std::uint64_t seed, const fs::path& out_dir, bool force) {
  const fs::path manifest_path = out_dir / "manifest.json";
  if (skip_existing(manifest_path, force)) return;

  DeformSpec spec;
  spec.generator = generator_from_name(generator);
  spec.n_frames = frames;
  spec.n_points = points;
  spec.amplitude = amplitude;
  spec.seed = seed;
  const SequenceWindow window = generate(spec);

  fs::create_directories(out_dir);
  SequenceManifest manifest;
  for (int t = 0; t < frames; ++t) {
    const fs::path frame_path = out_dir / frame_name(t);
    write_xyz(window.frames[static_cast<std::size_t>(t)], frame_path);
    manifest.frame_paths.push_back(frame_path);
  }
  const fs::path corr_path = out_dir / "correspondence.txt";
  write_correspondence(window.correspondences->front(), corr_path);
  manifest.correspondence_path = corr_path;
  write_manifest(manifest, manifest_path);
  std::cout << "wrote " << frames << " frames + manifest to " << out_dir.string() << "\n";
}

void cmd_preprocess(const fs::path& manifest_path, int k, const fs::path& out_dir, unsigned jobs,
                    bool force) {
  const SequenceManifest manifest = read_manifest(manifest_path);
  fs::create_directories(out_dir);
  for (const auto& frame_path : manifest.frame_paths) {
    const fs::path cache = geodesic_cache_path(out_dir, frame_path);
    if (skip_existing(cache, force)) continue;
    const PointCloud cloud = read_xyz(frame_path);

    // disconnected clouds: raise k by 2 up to three times before giving up
    int attempt_k = k;
    GeodesicMatrix d;
    for (int attempt = 0;; ++attempt) {
      try {
        d = shortest_paths(build_knn_graph(cloud, attempt_k), jobs);
        break;
      } catch (const Error& e) {
        if (e.code() != Errc::disconnected_graph || attempt >= 3) throw;
        std::cerr << frame_path.string() << ": " << e.what() << "; retrying with k="
                  << attempt_k + 2 << "\n";
        attempt_k += 2;
      }
    }
    cache_write(d, cache);
    std::cout << cache.string() << " (k=" << attempt_k << ", N=" << cloud.size() << ")\n";
  }
}

void cmd_train(const fs::path& config_path, bool has_seed_override, std::uint64_t seed_override,
               bool force) {
  TrainConfig config = train_config_from_file(config_path);
  if (has_seed_override) config.seed = seed_override;
  if (skip_existing(config.out_dir / "log.csv", force)) return;
  const TrainResult result = train(config);
  std::cout << "log: " << result.log_csv.string() << "\n"
            << "best checkpoint: " << result.best_checkpoint.string() << "\n"
            << "last checkpoint: " << result.last_checkpoint.string() << "\n";
}

void cmd_eval(const fs::path& checkpoint, const fs::path& manifest_path, const std::string& protocol,
              const fs::path& out, const fs::path& pck_csv, double delta, int knn_k,
              std::uint64_t seed, unsigned jobs, bool renormalize, bool force) {
  if (skip_existing(out, force)) return;
  const ModelParams params = load_checkpoint(checkpoint);
  const SequenceManifest manifest = read_manifest(manifest_path);
  EvalOptions opts;
  opts.inclusivity_delta = delta;
  opts.knn_k = knn_k;
  opts.seed = seed;
  opts.jobs = jobs;
  opts.renormalize = renormalize;
  const MetricsReport report = evaluate(params, manifest, parse_protocol(protocol), opts);
  write_report(report, out);
  if (!pck_csv.empty() && !report.pck.empty()) write_pck_csv(report.pck, pck_csv);
  std::cout << report_to_json(report) << "\n";
}

void cmd_infer(const fs::path& checkpoint, const fs::path& input, const fs::path& out,
               const fs::path& recon_out, const fs::path& w_out, bool force) {
  const InferenceResult result = infer_checkpoint(checkpoint, read_xyz(input));
  if (!out.empty()) {
    if (skip_existing(out, force)) return;
    PointCloud kps;
    kps.points = result.keypoints.positions;
    write_xyz(kps, out);
  } else {
    char buf[96];
    for (Eigen::Index j = 0; j < result.keypoints.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", result.keypoints.positions(j, 0),
                    result.keypoints.positions(j, 1), result.keypoints.positions(j, 2));
      std::cout << buf;
    }
  }
  if (!recon_out.empty() && !skip_existing(recon_out, force)) {
    write_xyz(result.reconstruction, recon_out);
  }
  if (!w_out.empty() && !skip_existing(w_out, force)) {
    std::ofstream w_file(w_out);
    if (!w_file) throw Error(Errc::io, "cannot write " + w_out.string());
    for (Eigen::Index j = 0; j < result.w.keypoints(); ++j) {
      for (Eigen::Index i = 0; i < result.w.points(); ++i) {
        w_file << result.w.w(j, i) << (i + 1 < result.w.points() ? ',' : '\n');
      }
    }
  }
}

void cmd_perturb(const fs::path& input, const fs::path& manifest_path, const fs::path& out,
                 const fs::path& out_dir, double noise, bool has_noise, int fps_count,
                 int fps_ratio, std::uint64_t seed, Eigen::Index start, bool force) {
  if (has_noise == (fps_count > 0 || fps_ratio > 0)) {
    throw Error(Errc::usage, "choose exactly one of --noise, --fps, --fps-ratio");
  }
  auto apply = [&](const PointCloud& cloud, std::uint64_t frame_seed) {
    if (has_noise) return add_gaussian_noise(cloud, noise, frame_seed);
    const Eigen::Index m = fps_count > 0 ? fps_count : cloud.size() / fps_ratio;
    return fps_downsample(cloud, m, start);
  };

  if (!input.empty()) {
    if (out.empty()) throw Error(Errc::usage, "--input needs --out");
    if (skip_existing(out, force)) return;
    write_xyz(apply(read_xyz(input), seed), out);
    return;
  }
  if (manifest_path.empty()) throw Error(Errc::usage, "need --input or --manifest");
  if (out_dir.empty()) throw Error(Errc::usage, "--manifest needs --out-dir");

  const fs::path new_manifest = out_dir / "manifest.json";
  if (skip_existing(new_manifest, force)) return;
  const SequenceManifest manifest = read_manifest(manifest_path);
  fs::create_directories(out_dir);
  SequenceManifest out_manifest;
  for (std::size_t t = 0; t < manifest.frame_paths.size(); ++t) {
    const fs::path frame_path = out_dir / manifest.frame_paths[t].filename();
    write_xyz(apply(read_xyz(manifest.frame_paths[t]), seed + t), frame_path);
    out_manifest.frame_paths.push_back(frame_path);
  }
  // index correspondences survive noise but not resampling
  if (has_noise && manifest.correspondence_path) {
    const fs::path corr = out_dir / manifest.correspondence_path->filename();
    fs::copy_file(*manifest.correspondence_path, corr, fs::copy_options::overwrite_existing);
    out_manifest.correspondence_path = corr;
  }
  write_manifest(out_manifest, new_manifest);
  std::cout << "wrote " << out_manifest.frame_paths.size() << " perturbed frames to "
            << out_dir.string() << "\n";
}

void cmd_diagnose(const fs::path& a_path, const fs::path& b_path, const fs::path& map_path,
                  const fs::path& manifest_path, int k, double threshold, const fs::path& out,
                  unsigned jobs, bool force) {
  if (!out.empty() && skip_existing(out, force)) return;

  struct PairJob {
    PointCloud a, b;
    CorrespondenceMap map;
    std::string label;
  };
  std::vector<PairJob> pairs;

  if (!a_path.empty() && !b_path.empty()) {
    PairJob job;
    job.a = read_xyz(a_path);
    job.b = read_xyz(b_path);
    if (!map_path.empty()) {
      job.map = read_correspondence(map_path);
    } else {
      job.map.resize(static_cast<std::size_t>(job.a.size()));
      for (std::size_t i = 0; i < job.map.size(); ++i) job.map[i] = static_cast<std::int32_t>(i);
    }
    job.label = a_path.filename().string() + " vs " + b_path.filename().string();
    pairs.push_back(std::move(job));
  } else if (!manifest_path.empty()) {
    const SequenceWindow sequence = load_sequence(read_manifest(manifest_path));
    for (std::size_t t = 0; t + 1 < sequence.frames.size(); ++t) {
      PairJob job;
      job.a = sequence.frames[t];
      job.b = sequence.frames[t + 1];
      if (sequence.correspondences) {
        job.map = (*sequence.correspondences)[t];
      } else {
        job.map.resize(static_cast<std::size_t>(job.a.size()));
        for (std::size_t i = 0; i < job.map.size(); ++i) job.map[i] = static_cast<std::int32_t>(i);
      }
      job.label = "frames " + std::to_string(t) + "-" + std::to_string(t + 1);
      pairs.push_back(std::move(job));
    }
  } else {
    throw Error(Errc::usage, "need --a/--b or --manifest");
  }

  nlohmann::json doc = nlohmann::json::array();
  bool any = false;
  for (const auto& job : pairs) {
    const ShortcutReport report = shortcut_diagnostic(job.a, job.b, job.map, threshold, k, jobs);
    nlohmann::json entry;
    entry["pair"] = job.label;
    entry["n"] = report.n;
    entry["k"] = report.k;
    entry["threshold"] = report.threshold;
    entry["pairs_checked"] = report.pairs_checked;
    entry["flagged"] = report.pairs.size();
    entry["worst"] = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(report.pairs.size(), 20); ++i) {
      const ShortcutPair& p = report.pairs[i];
      entry["worst"].push_back({{"i", p.i},
                                {"j", p.j},
                                {"dist_a", p.dist_a},
                                {"dist_b", p.dist_b},
                                {"rel_change", p.rel_change}});
    }
    doc.push_back(entry);
    any = any || !report.pairs.empty();
    std::cout << job.label << ": " << report.pairs.size() << " of " << report.pairs_checked
              << " pairs moved more than " << threshold * 100 << "%\n";
  }
  if (!out.empty()) {
    std::ofstream out_file(out);
    if (!out_file) throw Error(Errc::io, "cannot write " + out.string());
    out_file << doc.dump(2) << "\n";
  }
  if (any) std::cout << "geodesic shortcuts suspected: surfaces may be in near-contact\n";
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"geodesic-consistent keypoints on deforming point clouds"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic deformable sequence");
  std::string generator = "bend";
  int frames = 8, points = 512;
  double amplitude = 0.5;
  std::uint64_t seed = 0;
  fs::path out_dir;
  bool force = false;
  synth->add_option("--generator", generator, "bend | chain | breathe")->capture_default_str();
  synth->add_option("--frames", frames, "frame count")->capture_default_str();
  synth->add_option("--points", points, "points per frame")->capture_default_str();
  synth->add_option("--amplitude", amplitude, "deformation magnitude in [0,1]")->capture_default_str();
  synth->add_option("--seed", seed, "sampling seed")->capture_default_str();
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_flag("--force", force, "overwrite existing outputs");
  synth->callback([&] { cmd_synth(generator, frames, points, amplitude, seed, out_dir, force); });

  // preprocess
  auto* preprocess = app.add_subcommand("preprocess", "precompute per-frame geodesic caches");
  fs::path pre_manifest;
  int knn_k = 5;
  fs::path pre_out;
  unsigned jobs = 0;
  bool pre_force = false;
  preprocess->add_option("--manifest", pre_manifest, "sequence manifest")->required();
  preprocess->add_option("--k", knn_k, "k-NN graph degree")->capture_default_str();
  preprocess->add_option("--out-dir", pre_out, "cache directory")->required();
  preprocess->add_option("--jobs", jobs, "worker threads (0 = all cores)")->capture_default_str();
  preprocess->add_flag("--force", pre_force, "overwrite existing caches");
  preprocess->callback([&] { cmd_preprocess(pre_manifest, knn_k, pre_out, jobs, pre_force); });

  // train
  auto* train_cmd = app.add_subcommand("train", "run the training loop from a JSON config");
  fs::path config_path;
  std::uint64_t train_seed = 0;
  bool train_force = false;
  train_cmd->add_option("--config", config_path, "TrainConfig JSON document")->required();
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "override the config seed");
  train_cmd->add_flag("--force", train_force, "overwrite existing outputs");
  train_cmd->callback(
      [&] { cmd_train(config_path, seed_opt->count() > 0, train_seed, train_force); });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  fs::path checkpoint, eval_manifest, report_out, pck_csv;
  std::string protocol = "clean";
  double delta = 0.05;
  int eval_k = 5;
  std::uint64_t eval_seed = 0;
  unsigned eval_jobs = 0;
  bool renormalize = false, eval_force = false;
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "sequence manifest")->required();
  eval_cmd->add_option("--protocol", protocol, "clean | noise:VAR | fps:RATIO")->capture_default_str();
  eval_cmd->add_option("--out", report_out, "report JSON path")->required();
  eval_cmd->add_option("--pck-csv", pck_csv, "also write the PCK curve as tau,pck CSV");
  eval_cmd->add_option("--delta", delta, "inclusivity distance threshold")->capture_default_str();
  eval_cmd->add_option("--knn-k", eval_k, "k for the gd_err geodesic graphs")->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "noise seed")->capture_default_str();
  eval_cmd->add_option("--jobs", eval_jobs, "worker threads (0 = all cores)")->capture_default_str();
  eval_cmd->add_flag("--renormalize", renormalize, "re-normalize each frame before inference");
  eval_cmd->add_flag("--force", eval_force, "overwrite existing outputs");
  eval_cmd->callback([&] {
    cmd_eval(checkpoint, eval_manifest, protocol, report_out, pck_csv, delta, eval_k, eval_seed,
             eval_jobs, renormalize, eval_force);
  });

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "keypoints for a single point cloud");
  fs::path infer_checkpoint, infer_input, infer_out, recon_out, w_out;
  bool infer_force = false;
  infer_cmd->add_option("--checkpoint", infer_checkpoint, "model checkpoint")->required();
  infer_cmd->add_option("--input", infer_input, "input .xyz file")->required();
  infer_cmd->add_option("--out", infer_out, "keypoints .xyz (stdout when omitted)");
  infer_cmd->add_option("--recon-out", recon_out, "write the reconstruction .xyz");
  infer_cmd->add_option("--w-out", w_out, "write the probability matrix as CSV");
  infer_cmd->add_flag("--force", infer_force, "overwrite existing outputs");
  infer_cmd->callback(
      [&] { cmd_infer(infer_checkpoint, infer_input, infer_out, recon_out, w_out, infer_force); });

  // perturb
  auto* perturb = app.add_subcommand("perturb", "add noise or FPS-downsample clouds");
  fs::path pert_input, pert_manifest, pert_out, pert_out_dir;
  double noise = 0.0;
  int fps_count = 0, fps_ratio = 0;
  std::uint64_t pert_seed = 0;
  Eigen::Index fps_start = 0;
  bool pert_force = false;
  perturb->add_option("--input", pert_input, "single .xyz input");
  perturb->add_option("--manifest", pert_manifest, "perturb every frame of a manifest");
  perturb->add_option("--out", pert_out, "output .xyz (with --input)");
  perturb->add_option("--out-dir", pert_out_dir, "output directory (with --manifest)");
  auto* noise_opt = perturb->add_option("--noise", noise, "Gaussian noise variance");
  perturb->add_option("--fps", fps_count, "FPS-downsample to this many points");
  perturb->add_option("--fps-ratio", fps_ratio, "FPS-downsample by N/ratio");
  perturb->add_option("--seed", pert_seed, "noise seed")->capture_default_str();
  perturb->add_option("--start", fps_start, "FPS start index")->capture_default_str();
  perturb->add_flag("--force", pert_force, "overwrite existing outputs");
  perturb->callback([&] {
    cmd_perturb(pert_input, pert_manifest, pert_out, pert_out_dir, noise, noise_opt->count() > 0,
                fps_count, fps_ratio, pert_seed, fps_start, pert_force);
  });

  // diagnose-geodesics
  auto* diagnose = app.add_subcommand("diagnose-geodesics",
                                      "flag point pairs whose geodesic distances moved between frames");
  fs::path diag_a, diag_b, diag_map, diag_manifest, diag_out;
  int diag_k = 5;
  double threshold = 0.25;
  unsigned diag_jobs = 0;
  bool diag_force = false;
  diagnose->add_option("--a", diag_a, "first cloud (.xyz)");
  diagnose->add_option("--b", diag_b, "second cloud (.xyz)");
  diagnose->add_option("--map", diag_map, "correspondence file (identity when omitted)");
  diagnose->add_option("--manifest", diag_manifest, "check consecutive frames of a manifest");
  diagnose->add_option("--k", diag_k, "k-NN graph degree")->capture_default_str();
  diagnose->add_option("--threshold", threshold, "relative change threshold")->capture_default_str();
  diagnose->add_option("--out", diag_out, "report JSON path");
  diagnose->add_option("--jobs", diag_jobs, "worker threads (0 = all cores)")->capture_default_str();
  diagnose->add_flag("--force", diag_force, "overwrite existing outputs");
  diagnose->callback([&] {
    cmd_diagnose(diag_a, diag_b, diag_map, diag_manifest, diag_k, threshold, diag_out, diag_jobs,
                 diag_force);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const Error& e) {
    std::cerr << "geokp: error: " << e.what() << "\n";
    return e.code() == Errc::usage ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "geokp: error: unexpected: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace geokp::cli
