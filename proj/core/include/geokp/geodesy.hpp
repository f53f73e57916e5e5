// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "geokp/pcloud.hpp"

namespace geokp {

/// Undirected k-NN graph with Euclidean edge lengths. Adjacency lists are
/// sorted by neighbor index and symmetric (edge i-j appears under both ends).
struct NeighborGraph {
  Eigen::Index n = 0;
  std::vector<std::vector<std::pair<std::int32_t, double>>> edges;
};

enum class KnnMethod {
  automatic,    // brute force up to 512 points, k-d tree above
  brute_force,  // reference path; also the correctness oracle for the tree
  kd_tree,
};

/// Indices of the k Euclidean nearest neighbors of every point (excluding the
/// point itself), ordered by (distance, index). Ties break to the lower index.
std::vector<std::vector<std::int32_t>> knn_neighbors(const PointCloud& cloud, int k,
                                                     KnnMethod method = KnnMethod::automatic);

/// Connects each point to its k nearest neighbors and symmetrizes by union.
/// Throws Errc::k_too_large unless 1 <= k < N.
NeighborGraph build_knn_graph(const PointCloud& cloud, int k,
                              KnnMethod method = KnnMethod::automatic);

/// Sizes of the connected components of a graph, largest first.
std::vector<Eigen::Index> component_sizes(const NeighborGraph& graph);

/// All-pairs shortest-path lengths. Exactly symmetric with a zero diagonal.
struct GeodesicMatrix {
  Eigen::MatrixXd d;

  Eigen::Index size() const { return d.rows(); }
};

/// Runs a binary-heap Dijkstra from every node, parallel over sources.
/// Throws Errc::disconnected_graph (message lists component sizes) when the
/// graph is not connected.
GeodesicMatrix shortest_paths(const NeighborGraph& graph, unsigned jobs = 0);

/// One geodesic-shortcut suspect: a point pair whose graph distance moved by
/// more than the relative threshold between the two frames.
struct ShortcutPair {
  std::int32_t i = 0;
  std::int32_t j = 0;
  double dist_a = 0.0;
  double dist_b = 0.0;
  double rel_change = 0.0;
};

struct ShortcutReport {
  std::vector<ShortcutPair> pairs;  // sorted by rel_change, largest first
  double threshold = 0.25;
  double min_distance = 0.3;
  int k = 5;
  Eigen::Index n = 0;
  std::size_t pairs_checked = 0;
};

/// Flags point pairs whose geodesic distance changed by more than
/// `rel_threshold` between two corresponding frames; large entries usually
/// mean surfaces in near-contact creating spurious graph edges. The relative
/// change is measured against max(dist_a, min_distance): at the sampling
/// scale k-NN rewiring makes relative changes pure noise, while a real
/// contact shortcut moves macro-scale distances and always registers.
ShortcutReport shortcut_diagnostic(const PointCloud& cloud_a, const PointCloud& cloud_b,
                                   const CorrespondenceMap& correspondence,
                                   double rel_threshold = 0.25, int k = 5,
                                   double min_distance = 0.3, unsigned jobs = 0);

// --- cache file -------------------------------------------------------------
//
// Layout: magic "GKPD", u32 version (=1), u32 N, then N*N little-endian
// float32 values row-major. Distances are quantized to float32 on write;
// a matrix whose entries are float32-representable round-trips bit-exactly.

void cache_write(const GeodesicMatrix& matrix, const std::filesystem::path& file);
GeodesicMatrix cache_read(const std::filesystem::path& file);

}  // namespace geokp
