// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geokp/losses.hpp"
#include "geokp/nnet.hpp"
#include "geokp/pcloud.hpp"

namespace geokp {

/// Percentage of keypoints whose nearest keypoint in the next frame carries
/// the same index, pooled over all consecutive frame pairs.
double t_con(std::span<const KeypointSet> kp_seq);

struct PckCurve {
  std::vector<double> taus;
  std::vector<double> percents;  // non-decreasing in tau

  bool empty() const { return taus.empty(); }
};

inline std::vector<double> default_pck_taus() {
  return {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
}

/// Keypoint repeatability. Frame 0 is the reference; its probability rows are
/// transferred to every later frame through the ground-truth correspondences
/// and re-expected over that frame's coordinates. PCK_tau is the percentage
/// of (keypoint, frame) pairs with repeatability error below tau.
PckCurve pck(const SequenceWindow& window, std::span<const ProbabilityMatrix> ws,
             std::span<const double> taus);

/// Percentage of keypoints within `delta` of their nearest cloud point.
double inclusivity(const KeypointSet& kps, const PointCloud& cloud, double delta = 0.05);

/// Percentage ratio of the keypoint AABB volume to the cloud AABB volume,
/// each side padded by 1e-6 against degenerate boxes, clamped to 100.
double coverage_metric(const KeypointSet& kps, const PointCloud& cloud);

/// Mean over consecutive frame pairs of the mean absolute off-diagonal
/// difference of the expected-geodesic matrices W D W'. Zero by convention
/// when K < 2 (no off-diagonal entries).
double gd_err(std::span<const ProbabilityMatrix> ws, std::span<const GeodesicMatrix> ds);

struct EvalProtocol {
  enum class Kind { clean, noise, fps };
  Kind kind = Kind::clean;
  double noise_variance = 0.0;
  int fps_ratio = 1;
};

/// Parses "clean", "noise:<variance>" or "fps:<ratio>".
EvalProtocol parse_protocol(std::string_view text);
std::string to_string(const EvalProtocol& protocol);

struct EvalOptions {
  double inclusivity_delta = 0.05;
  std::vector<double> pck_taus = default_pck_taus();
  int knn_k = 5;           // for the gd_err geodesic matrices
  std::uint64_t seed = 0;  // noise seed (per frame: seed + frame index)
  unsigned jobs = 0;
  // Manifest data is expected to be data-prep normalized already, so frames
  // are fed to the network as stored by default.
  bool renormalize = false;
};

struct MetricsReport {
  std::string protocol;
  double noise_variance = 0.0;
  int fps_ratio = 1;
  double inclusivity_delta = 0.05;
  std::uint64_t seed = 0;

  double inclusivity = 0.0;  // percent
  double coverage = 0.0;     // percent
  double t_con = 0.0;        // percent
  PckCurve pck;              // empty under fps (index correspondences break)
  double recon_err = 0.0;    // Chamfer sum convention
  double gd_err = 0.0;

  std::vector<std::string> notes;
};

/// Runs the full evaluation protocol: perturb, infer per frame, score.
MetricsReport evaluate(const ModelParams& params, const SequenceManifest& manifest,
                       const EvalProtocol& protocol, const EvalOptions& opts = {});

std::string report_to_json(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::filesystem::path& file);
void write_pck_csv(const PckCurve& curve, const std::filesystem::path& file);

}  // namespace geokp
