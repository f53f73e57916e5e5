// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "geokp/error.hpp"

namespace geokp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// One point per row. All geometry is kept in 64-bit floats.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// A single frame of geometry. Treated as immutable once constructed; all
/// operations below return new clouds.
struct PointCloud {
  PointMatrix points;  // N x 3
  int frame_id = 0;

  Eigen::Index size() const { return points.rows(); }
};

/// Index map between two consecutive frames: point i of frame t corresponds
/// to point map[i] of frame t+1. Must be a bijection on {0..N-1}.
using CorrespondenceMap = std::vector<std::int32_t>;

/// An ordered run of T frames sharing the same point count, with optional
/// per-consecutive-pair ground-truth correspondences (T-1 maps).
struct SequenceWindow {
  std::vector<PointCloud> frames;
  std::optional<std::vector<CorrespondenceMap>> correspondences;

  Eigen::Index frame_count() const { return static_cast<Eigen::Index>(frames.size()); }
};

/// Centers the cloud at its centroid and scales so the largest axis-aligned
/// bounding-box side is exactly 1 (uniform scale + translation only).
/// Throws Errc::all_points_coincident when the max extent is below 1e-12.
PointCloud normalize(const PointCloud& cloud);

/// Greedy farthest point sampling: starting from `start`, each pick maximizes
/// the minimum distance to the already-picked set; ties go to the lower index.
/// Points are returned in visitation order.
PointCloud fps_downsample(const PointCloud& cloud, Eigen::Index m, Eigen::Index start = 0);

/// Perturbs every coordinate by i.i.d. normal(0, variance) noise drawn from a
/// generator seeded with `seed`.
PointCloud add_gaussian_noise(const PointCloud& cloud, double variance, std::uint64_t seed);

/// Maps every point x to R*x + t. The rotation must satisfy R^T R = I within 1e-9.
PointCloud rigid_transform(const PointCloud& cloud, const Mat3& rotation, const Vec3& translation);

struct Aabb {
  Vec3 lo;
  Vec3 hi;

  Vec3 extents() const { return hi - lo; }
};

Aabb bounding_box(const PointMatrix& points);

// --- text formats ----------------------------------------------------------
//
// Point cloud: one point per line, three whitespace-separated decimals;
// lines starting with '#' (and blank lines) are ignored.
// Correspondence file: one integer per line, row i holding the frame-(t+1)
// index of frame-t point i.

PointCloud read_xyz(const std::filesystem::path& file);
void write_xyz(const PointCloud& cloud, const std::filesystem::path& file);

CorrespondenceMap read_correspondence(const std::filesystem::path& file);
void write_correspondence(const CorrespondenceMap& map, const std::filesystem::path& file);

/// JSON sequence manifest: {"frames": [...], "correspondence": "..."}.
/// Paths are stored relative to the manifest and resolved on load. The single
/// optional correspondence file applies to every consecutive frame pair.
struct SequenceManifest {
  std::vector<std::filesystem::path> frame_paths;
  std::optional<std::filesystem::path> correspondence_path;
};

SequenceManifest read_manifest(const std::filesystem::path& file);
void write_manifest(const SequenceManifest& manifest, const std::filesystem::path& file);

/// Loads every frame (and the correspondence maps, when present) of a manifest.
SequenceWindow load_sequence(const SequenceManifest& manifest);

/// Validates that a map is a bijection on {0..n-1}.
void check_correspondence(const CorrespondenceMap& map, Eigen::Index n);

}  // namespace geokp
