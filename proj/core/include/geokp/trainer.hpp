// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geokp/losses.hpp"
#include "geokp/nnet.hpp"
#include "geokp/pcloud.hpp"

namespace geokp {

struct TrainConfig {
  int k_keypoints = 12;
  int m_recon = 512;
  int t_window = 4;
  int stride = 1;
  int batch_windows = 4;  // windows per optimizer step; 32 at paper scale
  int epochs = 0;
  double lr = 1e-3;
  LossWeights weights;      // {1, 2.5, 6, 6, 2}, epsilon 1e-2
  bool ordered_pairs = true;
  std::uint64_t seed = 0;
  int knn_k = 5;
  int n_points = 512;  // expected N per frame; 2048 at paper scale
  unsigned jobs = 0;

  // ablation switches; a set flag zeroes the weight and removes the term
  bool ablate_rec = false;
  bool ablate_cov = false;
  bool ablate_surf = false;
  bool ablate_geo = false;
  bool ablate_smt = false;

  std::vector<std::filesystem::path> train_manifests;
  std::vector<std::filesystem::path> val_manifests;
  std::filesystem::path geodesic_dir;
  std::filesystem::path out_dir;
};

/// Parses the JSON document mirroring TrainConfig. Paths resolve relative to
/// the config file's directory.
TrainConfig train_config_from_file(const std::filesystem::path& file);
TrainConfig train_config_from_string(const std::string& text,
                                     const std::filesystem::path& base_dir = ".");

/// Loss weights with the ablation flags applied.
LossWeights effective_weights(const TrainConfig& config);

/// Geodesic cache file for a frame: <geodesic_dir>/<frame stem>.gkpd.
std::filesystem::path geodesic_cache_path(const std::filesystem::path& geodesic_dir,
                                          const std::filesystem::path& frame_path);

/// A loaded sequence plus its per-frame geodesic caches (lazily read).
struct LoadedSequence {
  SequenceWindow full;
  std::vector<std::filesystem::path> cache_paths;
  std::vector<GeodesicMatrix> ds;  // empty matrices until loaded

  /// Loads (once) and returns the geodesic matrix of frame t.
  const GeodesicMatrix& geodesics(std::size_t t);
};

/// Overlapping training windows over one sequence.
struct WindowSet {
  LoadedSequence sequence;
  std::vector<int> begins;
  int t_window = 0;

  std::size_t count() const { return begins.size(); }
  /// Materializes window i (frames and correspondences sliced out).
  SequenceWindow window(std::size_t i) const;
};

/// Slices a manifest into windows of t_window consecutive frames at the given
/// stride. With require_caches, every frame's geodesic cache must exist (the
/// files are not read here). Throws Errc::too_short_sequence or
/// Errc::missing_geodesic_cache.
WindowSet make_windows(const SequenceManifest& manifest, int t_window, int stride,
                       const std::filesystem::path& geodesic_dir, bool require_caches);

struct TrainResult {
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log_csv;
  int epochs_run = 0;
  double first_epoch_total = 0.0;
  double last_epoch_total = 0.0;
  double best_val_total = 0.0;
};

/// Full training loop. Writes `log.csv` (schema
/// epoch,l_rec,l_cov,l_surf,l_geo,l_smt,total,val_total), `best.gkpm` (lowest
/// validation total) and `last.gkpm` under config.out_dir. Deterministic in
/// the seed: two identical runs produce byte-identical logs and checkpoints.
/// A non-finite loss term aborts with Errc::non_finite_loss naming the term.
TrainResult train(const TrainConfig& config);

struct InferenceResult {
  KeypointSet keypoints;      // expressed in the input's coordinates
  ProbabilityMatrix w;
  PointCloud reconstruction;  // in the coordinate frame the network consumed
  PointCloud network_input;   // the (possibly re-normalized) cloud fed forward
};

/// Single-frame inference; no geodesic data involved. With renormalize the
/// cloud is normalized internally and the keypoints are mapped back to the
/// input's coordinates (convex combinations commute with the affine map).
/// Requires N >= K.
InferenceResult infer(const ModelParams& params, const PointCloud& cloud, bool renormalize = true);
InferenceResult infer_checkpoint(const std::filesystem::path& checkpoint, const PointCloud& cloud,
                                 bool renormalize = true);

}  // namespace geokp
