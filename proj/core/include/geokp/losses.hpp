// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

#include "geokp/geodesy.hpp"
#include "geokp/pcloud.hpp"

namespace geokp {

/// K x N row-stochastic matrix; row j is keypoint j's distribution over the
/// N input points.
struct ProbabilityMatrix {
  Eigen::MatrixXd w;

  Eigen::Index keypoints() const { return w.rows(); }
  Eigen::Index points() const { return w.cols(); }

  /// Throws unless every entry is in [0, 1] and every row sums to 1 within 1e-9.
  void validate() const;
};

/// Expected keypoint locations, one per row. Convex combinations of the
/// source cloud, so they always fall inside its bounding box.
struct KeypointSet {
  Eigen::Matrix<double, Eigen::Dynamic, 3> positions;

  Eigen::Index size() const { return positions.rows(); }
};

/// Loss term weights. Defaults follow the reference configuration
/// {rec, cov, surf} = {1, 2.5, 6} and {geo, smt} = {6, 2}; epsilon guards the
/// coverage denominator. A weight of exactly 0 disables its term entirely.
struct LossWeights {
  double rec = 1.0;
  double cov = 2.5;
  double surf = 6.0;
  double geo = 6.0;
  double smt = 2.0;
  double epsilon = 1e-2;
};

using GradPoints = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// positions = W * X.
KeypointSet expected_keypoints(const ProbabilityMatrix& w, const PointCloud& cloud);

struct ChamferResult {
  double value = 0.0;
  GradPoints grad_q;  // d value / d q, one row per point of q
};

/// Symmetric sum of squared nearest-neighbor distances,
/// sum_i min_j |p_i - q_j|^2 + sum_j min_i |q_j - p_i|^2 (sum convention).
/// Nearest-neighbor ties resolve to the lowest index.
ChamferResult chamfer(const PointCloud& p, const PointCloud& q);

struct KeypointGradResult {
  double value = 0.0;
  GradPoints grad_keypoints;
};

/// Inverse of (mean nearest-other-keypoint distance + epsilon); penalizes
/// keypoints for clustering.
KeypointGradResult coverage_loss(const KeypointSet& kps, double epsilon);

/// Mean distance from each keypoint to its nearest cloud point.
KeypointGradResult surface_loss(const KeypointSet& kps, const PointCloud& cloud);

struct GeodesicLossResult {
  double value = 0.0;
  std::vector<Eigen::MatrixXd> grad_w;  // one K x N gradient per frame
};

/// Frobenius mismatch of the expected-geodesic matrices G^t = W^t D^t W^t'
/// across frames. With ordered_pairs (default) every ordered frame pair a != b
/// contributes, i.e. twice the sum over unordered pairs a < b.
GeodesicLossResult geodesic_loss(std::span<const ProbabilityMatrix> ws,
                                 std::span<const GeodesicMatrix> ds, bool ordered_pairs = true);

struct SmoothingLossResult {
  double value = 0.0;
  std::vector<GradPoints> grad_keypoints;  // one K x 3 gradient per frame
};

/// Mean consecutive-frame keypoint displacement,
/// 1/((T-1)K) sum_t sum_j |k_j^t - k_j^{t+1}|.
SmoothingLossResult smoothing_loss(std::span<const KeypointSet> kp_seq);

struct LossBreakdown {
  double rec = 0.0;
  double cov = 0.0;
  double surf = 0.0;
  double geo = 0.0;
  double smt = 0.0;
  double total = 0.0;
};

struct TotalLossResult {
  LossBreakdown breakdown;
  // Gradients of the weighted total. grad_w carries the direct W dependence
  // (geodesic term); grad_keypoints the coverage/surface/smoothing terms;
  // grad_recon the reconstruction term. The keypoints -> W chain rule is the
  // caller's (network's) responsibility.
  std::vector<Eigen::MatrixXd> grad_w;
  std::vector<GradPoints> grad_keypoints;
  std::vector<GradPoints> grad_recon;
};

/// Weighted sum over the window: per-frame shape terms (reconstruction,
/// coverage, surface) averaged over the T frames, plus the window-level
/// geodesic and smoothing terms. Terms with zero weight are skipped, so `ds`
/// may be empty whenever weights.geo == 0.
TotalLossResult total_loss(const SequenceWindow& window, std::span<const ProbabilityMatrix> ws,
                           std::span<const GeodesicMatrix> ds,
                           std::span<const PointCloud> reconstructions, const LossWeights& weights,
                           bool ordered_pairs = true);

}  // namespace geokp
