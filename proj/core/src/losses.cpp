// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace geokp {

namespace {

// zero-norm guard for the subdifferentiable distance terms
constexpr double kZeroNorm = 1e-15;

void require_same_keypoint_count(std::span<const ProbabilityMatrix> ws) {
  for (std::size_t t = 1; t < ws.size(); ++t) {
    if (ws[t].keypoints() != ws[0].keypoints()) {
      throw Error(Errc::shape_mismatch, "probability matrices disagree on K");
    }
  }
}

}  // namespace

void ProbabilityMatrix::validate() const {
  if (w.rows() < 1 || w.cols() < 1) {
    throw Error(Errc::shape_mismatch, "probability matrix is empty");
  }
  if ((w.array() < -1e-12).any() || (w.array() > 1.0 + 1e-12).any()) {
    throw Error(Errc::shape_mismatch, "probability matrix entries outside [0, 1]");
  }
  const Eigen::VectorXd sums = w.rowwise().sum();
  if (((sums.array() - 1.0).abs() > 1e-9).any()) {
    throw Error(Errc::shape_mismatch, "probability matrix rows must sum to 1 within 1e-9");
  }
}

KeypointSet expected_keypoints(const ProbabilityMatrix& w, const PointCloud& cloud) {
  if (w.points() != cloud.size()) {
    throw Error(Errc::shape_mismatch, "probability matrix has " + std::to_string(w.points()) +
                                          " columns for a cloud of " + std::to_string(cloud.size()));
  }
  KeypointSet kps;
  kps.positions = w.w * cloud.points;
  return kps;
}

ChamferResult chamfer(const PointCloud& p, const PointCloud& q) {
  const Eigen::Index n = p.size();
  const Eigen::Index m = q.size();
  if (n == 0 || m == 0) throw Error(Errc::empty_cloud, "chamfer needs two non-empty clouds");

  ChamferResult result;
  result.grad_q = GradPoints::Zero(m, 3);

  // forward term: every p_i against its nearest q
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d2 = (p.points.row(i) - q.points.row(j)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    result.value += best_d2;
    result.grad_q.row(best) += 2.0 * (q.points.row(best) - p.points.row(i));
  }

  // backward term: every q_j against its nearest p
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d2 = (q.points.row(j) - p.points.row(i)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    result.value += best_d2;
    result.grad_q.row(j) += 2.0 * (q.points.row(j) - p.points.row(best));
  }
  return result;
}

KeypointGradResult coverage_loss(const KeypointSet& kps, double epsilon) {
  const Eigen::Index k = kps.size();
  if (k < 2) throw Error(Errc::too_few_keypoints, "coverage loss needs K >= 2");
  if (!(epsilon > 0.0)) throw Error(Errc::precondition, "coverage loss needs epsilon > 0");
  if (!kps.positions.allFinite()) {
    // propagate instead of crashing the argmin; the trainer's guard names
    // the non-finite term and halts before the update
    KeypointGradResult bad;
    bad.value = std::numeric_limits<double>::quiet_NaN();
    bad.grad_keypoints = GradPoints::Zero(k, 3);
    return bad;
  }

  double mean_min = 0.0;
  GradPoints d_mean = GradPoints::Zero(k, 3);
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j == i) continue;
      const double d = (kps.positions.row(i) - kps.positions.row(j)).norm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    mean_min += best_d / static_cast<double>(k);
    if (best_d > kZeroNorm) {
      const Eigen::RowVector3d u =
          (kps.positions.row(i) - kps.positions.row(best)) / best_d / static_cast<double>(k);
      d_mean.row(i) += u;
      d_mean.row(best) -= u;
    }
  }

  const double denom = mean_min + epsilon;
  KeypointGradResult result;
  result.value = 1.0 / denom;
  result.grad_keypoints = -d_mean / (denom * denom);
  return result;
}

KeypointGradResult surface_loss(const KeypointSet& kps, const PointCloud& cloud) {
  const Eigen::Index k = kps.size();
  if (cloud.size() == 0) throw Error(Errc::empty_cloud, "surface loss needs a non-empty cloud");
  if (k == 0) throw Error(Errc::too_few_keypoints, "surface loss needs at least one keypoint");

  KeypointGradResult result;
  result.grad_keypoints = GradPoints::Zero(k, 3);
  for (Eigen::Index i = 0; i < k; ++i) {
    Eigen::Index best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < cloud.size(); ++j) {
      const double d2 = (kps.positions.row(i) - cloud.points.row(j)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    const double d = std::sqrt(best_d2);
    result.value += d / static_cast<double>(k);
    if (d > kZeroNorm) {
      result.grad_keypoints.row(i) =
          (kps.positions.row(i) - cloud.points.row(best)) / d / static_cast<double>(k);
    }
  }
  return result;
}

GeodesicLossResult geodesic_loss(std::span<const ProbabilityMatrix> ws,
                                 std::span<const GeodesicMatrix> ds, bool ordered_pairs) {
  const std::size_t frames = ws.size();
  if (frames < 2) throw Error(Errc::too_few_frames, "geodesic loss needs T >= 2");
  if (ds.size() != frames) {
    throw Error(Errc::shape_mismatch, "need one geodesic matrix per probability matrix");
  }
  require_same_keypoint_count(ws);
  for (std::size_t t = 0; t < frames; ++t) {
    if (ws[t].points() != ds[t].size()) {
      throw Error(Errc::shape_mismatch, "frame " + std::to_string(t) +
                                            ": W has " + std::to_string(ws[t].points()) +
                                            " columns, D is " + std::to_string(ds[t].size()) + "^2");
    }
  }

  const double factor = ordered_pairs ? 2.0 : 1.0;
  const Eigen::Index k = ws[0].keypoints();
  const auto t_count = static_cast<double>(frames);

  // expected-geodesic matrices and the W*D products reused by the gradient
  std::vector<Eigen::MatrixXd> wd(frames);
  std::vector<Eigen::MatrixXd> g(frames);
  Eigen::MatrixXd g_sum = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t t = 0; t < frames; ++t) {
    wd[t] = ws[t].w * ds[t].d;
    g[t] = wd[t] * ws[t].w.transpose();
    g_sum += g[t];
  }

  GeodesicLossResult result;
  for (std::size_t a = 0; a < frames; ++a) {
    for (std::size_t b = a + 1; b < frames; ++b) {
      result.value += factor * (g[a] - g[b]).squaredNorm();
    }
  }

  result.grad_w.resize(frames);
  for (std::size_t a = 0; a < frames; ++a) {
    result.grad_w[a] = factor * 4.0 * (t_count * g[a] - g_sum) * wd[a];
  }
  return result;
}

SmoothingLossResult smoothing_loss(std::span<const KeypointSet> kp_seq) {
  const std::size_t frames = kp_seq.size();
  if (frames < 2) throw Error(Errc::too_few_frames, "smoothing loss needs T >= 2");
  const Eigen::Index k = kp_seq[0].size();
  for (const auto& kps : kp_seq) {
    if (kps.size() != k) throw Error(Errc::shape_mismatch, "keypoint sets disagree on K");
  }

  const double scale = 1.0 / (static_cast<double>(frames - 1) * static_cast<double>(k));
  SmoothingLossResult result;
  result.grad_keypoints.assign(frames, GradPoints::Zero(k, 3));
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::RowVector3d delta =
          kp_seq[t].positions.row(j) - kp_seq[t + 1].positions.row(j);
      const double d = delta.norm();
      result.value += scale * d;
      if (d > kZeroNorm) {
        const Eigen::RowVector3d u = scale * delta / d;
        result.grad_keypoints[t].row(j) += u;
        result.grad_keypoints[t + 1].row(j) -= u;
      }
    }
  }
  return result;
}

TotalLossResult total_loss(const SequenceWindow& window, std::span<const ProbabilityMatrix> ws,
                           std::span<const GeodesicMatrix> ds,
                           std::span<const PointCloud> reconstructions, const LossWeights& weights,
                           bool ordered_pairs) {
  const std::size_t frames = window.frames.size();
  if (frames == 0) throw Error(Errc::too_few_frames, "total loss needs at least one frame");
  if (ws.size() != frames) throw Error(Errc::shape_mismatch, "need one probability matrix per frame");
  const bool needs_deformation = weights.geo != 0.0 || weights.smt != 0.0;
  if (needs_deformation && frames < 2) {
    throw Error(Errc::too_few_frames, "deformation losses need T >= 2");
  }
  if (weights.rec != 0.0 && reconstructions.size() != frames) {
    throw Error(Errc::shape_mismatch, "need one reconstruction per frame");
  }
  if (weights.geo != 0.0 && ds.size() != frames) {
    throw Error(Errc::shape_mismatch, "need one geodesic matrix per frame");
  }

  const Eigen::Index k = ws[0].keypoints();
  TotalLossResult result;
  result.grad_w.assign(frames, Eigen::MatrixXd());
  result.grad_keypoints.assign(frames, GradPoints::Zero(k, 3));
  result.grad_recon.assign(frames, GradPoints());
  for (std::size_t t = 0; t < frames; ++t) {
    result.grad_w[t] = Eigen::MatrixXd::Zero(k, ws[t].points());
  }

  const bool needs_keypoints = weights.cov != 0.0 || weights.surf != 0.0 || weights.smt != 0.0;
  std::vector<KeypointSet> kps;
  if (needs_keypoints) {
    kps.reserve(frames);
    for (std::size_t t = 0; t < frames; ++t) kps.push_back(expected_keypoints(ws[t], window.frames[t]));
  }

  const double frame_mean = 1.0 / static_cast<double>(frames);

  if (weights.rec != 0.0) {
    for (std::size_t t = 0; t < frames; ++t) {
      ChamferResult rec = chamfer(window.frames[t], reconstructions[t]);
      result.breakdown.rec += frame_mean * rec.value;
      result.grad_recon[t] = (weights.rec * frame_mean) * rec.grad_q;
    }
  }

  if (weights.cov != 0.0) {
    for (std::size_t t = 0; t < frames; ++t) {
      KeypointGradResult cov = coverage_loss(kps[t], weights.epsilon);
      result.breakdown.cov += frame_mean * cov.value;
      result.grad_keypoints[t] += (weights.cov * frame_mean) * cov.grad_keypoints;
    }
  }

  if (weights.surf != 0.0) {
    for (std::size_t t = 0; t < frames; ++t) {
      KeypointGradResult surf = surface_loss(kps[t], window.frames[t]);
      result.breakdown.surf += frame_mean * surf.value;
      result.grad_keypoints[t] += (weights.surf * frame_mean) * surf.grad_keypoints;
    }
  }

  if (weights.geo != 0.0) {
    GeodesicLossResult geo = geodesic_loss(ws, ds, ordered_pairs);
    result.breakdown.geo = geo.value;
    for (std::size_t t = 0; t < frames; ++t) result.grad_w[t] += weights.geo * geo.grad_w[t];
  }

  if (weights.smt != 0.0) {
    SmoothingLossResult smt = smoothing_loss(kps);
    result.breakdown.smt = smt.value;
    for (std::size_t t = 0; t < frames; ++t) {
      result.grad_keypoints[t] += weights.smt * smt.grad_keypoints[t];
    }
  }

  result.breakdown.total = weights.rec * result.breakdown.rec + weights.cov * result.breakdown.cov +
                           weights.surf * result.breakdown.surf + weights.geo * result.breakdown.geo +
                           weights.smt * result.breakdown.smt;
  return result;
}

}  // namespace geokp
