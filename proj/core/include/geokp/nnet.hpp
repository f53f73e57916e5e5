// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "geokp/losses.hpp"
#include "geokp/pcloud.hpp"

namespace geokp {

// Feature widths of the keypoint network. The encoder is a shared per-point
// MLP whose 128-wide output is concatenated with its global max-pool before
// the scoring head; the decoder maps the flattened keypoints back to M points.
inline constexpr int kEncHidden = 64;
inline constexpr int kEncFeature = 128;
inline constexpr int kHeadHidden = 128;
inline constexpr int kDecHidden = 256;

/// The trainable tensors, in a fixed order shared by gradients, Adam moments
/// and the checkpoint format. Biases are stored as n x 1 matrices.
struct ModelTensors {
  Eigen::MatrixXd enc1_w, enc1_b;  // 64 x 3, 64 x 1
  Eigen::MatrixXd enc2_w, enc2_b;  // 128 x 64, 128 x 1
  Eigen::MatrixXd head1_w, head1_b;  // 128 x 256, 128 x 1
  Eigen::MatrixXd head2_w, head2_b;  // K x 128, K x 1
  Eigen::MatrixXd dec1_w, dec1_b;  // 256 x 3K, 256 x 1
  Eigen::MatrixXd dec2_w, dec2_b;  // 256 x 256, 256 x 1
  Eigen::MatrixXd dec3_w, dec3_b;  // 3M x 256, 3M x 1
};

inline constexpr std::array<Eigen::MatrixXd ModelTensors::*, 14> kTensorMembers = {
    &ModelTensors::enc1_w, &ModelTensors::enc1_b, &ModelTensors::enc2_w, &ModelTensors::enc2_b,
    &ModelTensors::head1_w, &ModelTensors::head1_b, &ModelTensors::head2_w, &ModelTensors::head2_b,
    &ModelTensors::dec1_w, &ModelTensors::dec1_b, &ModelTensors::dec2_w, &ModelTensors::dec2_b,
    &ModelTensors::dec3_w, &ModelTensors::dec3_b};

struct ModelParams {
  int k = 12;   // keypoints
  int m = 512;  // reconstruction points
  ModelTensors t;
  std::uint64_t revision = 0;  // bumped on every update; guards stale caches
};

/// Glorot-uniform weights (+- sqrt(6/(fan_in+fan_out))), zero biases,
/// deterministic in the seed.
ModelParams init_params(int k, int m, std::uint64_t seed);

/// Total number of scalar parameters.
std::size_t param_count(const ModelParams& params);

/// Intermediates retained by forward() for the matching backward() call.
struct ForwardCache {
  Eigen::MatrixXd x;        // 3 x N input points
  Eigen::MatrixXd z1, h1;   // 64 x N
  Eigen::MatrixXd z2, h2;   // 128 x N
  std::vector<Eigen::Index> pool_argmax;  // per feature channel
  Eigen::MatrixXd concat;   // 256 x N: [h2; pooled global feature]
  Eigen::MatrixXd z3, h3;   // 128 x N
  Eigen::MatrixXd w;        // K x N softmax output
  Eigen::VectorXd dec_in;   // 3K flattened keypoints
  Eigen::VectorXd za, ha, zb, hb, out;  // decoder activations
  std::uint64_t params_revision = 0;
};

struct ForwardResult {
  ProbabilityMatrix w;
  KeypointSet keypoints;
  PointCloud reconstruction;  // M x 3, in the input's coordinate frame
  ForwardCache cache;
};

/// Runs the network on one cloud. W rows are softmax distributions over the
/// N points; keypoints are their expectations; the reconstruction decodes the
/// flattened keypoints.
ForwardResult forward(const ModelParams& params, const PointCloud& cloud);

/// Backpropagates the loss gradients of one frame to all parameters.
/// Any of the three upstream gradients may be empty (treated as zero).
/// Throws Errc::stale_cache when the cache predates a parameter update.
ModelTensors backward(const ModelParams& params, const ForwardCache& cache,
                      const Eigen::MatrixXd& grad_w, const GradPoints& grad_keypoints,
                      const GradPoints& grad_recon);

ModelTensors zeros_like(const ModelParams& params);

struct AdamState {
  ModelTensors m1;  // first moments
  ModelTensors m2;  // second moments
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const ModelParams& params, double lr = 1e-3);

/// One bias-corrected Adam update. Bumps params.revision.
void adam_step(ModelParams& params, const ModelTensors& grads, AdamState& state);

// Checkpoint format: magic "GKPM", u32 version (=1), u32 K, u32 M, u32 tensor
// count, per-tensor u32 rows + u32 cols, then little-endian float64 data in
// member order (column-major). Writes go through a temp file + rename.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& file);
ModelParams load_checkpoint(const std::filesystem::path& file);

}  // namespace geokp
