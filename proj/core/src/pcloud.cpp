// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/pcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

namespace geokp {

namespace {

void require_points(const PointCloud& cloud, Eigen::Index at_least, const char* op) {
  if (cloud.size() < at_least) {
    throw Error(Errc::precondition,
                std::string(op) + " requires at least " + std::to_string(at_least) + " points");
  }
  if (!cloud.points.allFinite()) {
    throw Error(Errc::precondition, std::string(op) + ": cloud has non-finite coordinates");
  }
}

}  // namespace

Aabb bounding_box(const PointMatrix& points) {
  Aabb box;
  box.lo = points.colwise().minCoeff().transpose();
  box.hi = points.colwise().maxCoeff().transpose();
  return box;
}

PointCloud normalize(const PointCloud& cloud) {
  require_points(cloud, 2, "normalize");
  const Vec3 centroid = cloud.points.colwise().mean().transpose();
  const Aabb box = bounding_box(cloud.points);
  const double max_side = box.extents().maxCoeff();
  if (max_side < 1e-12) {
    throw Error(Errc::all_points_coincident, "cloud extent below 1e-12 on every axis");
  }
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points = (cloud.points.rowwise() - centroid.transpose()) / max_side;
  return out;
}

PointCloud fps_downsample(const PointCloud& cloud, Eigen::Index m, Eigen::Index start) {
  require_points(cloud, 1, "fps_downsample");
  const Eigen::Index n = cloud.size();
  if (m == 0 || m > n) {
    throw Error(Errc::invalid_count,
                "fps_downsample: m=" + std::to_string(m) + " out of range for N=" + std::to_string(n));
  }
  if (start < 0 || start >= n) {
    throw Error(Errc::invalid_count, "fps_downsample: start index out of range");
  }

  std::vector<Eigen::Index> picked;
  picked.reserve(static_cast<std::size_t>(m));
  picked.push_back(start);

  // min squared distance from each point to the picked set
  Eigen::VectorXd min_d2 =
      (cloud.points.rowwise() - cloud.points.row(start)).rowwise().squaredNorm();

  while (static_cast<Eigen::Index>(picked.size()) < m) {
    Eigen::Index best = -1;
    double best_d2 = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
    min_d2[best] = -1.0;  // marks as taken; never re-selected
    const Eigen::VectorXd d2 =
        (cloud.points.rowwise() - cloud.points.row(best)).rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (min_d2[i] >= 0.0) min_d2[i] = std::min(min_d2[i], d2[i]);
    }
  }

  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points.resize(m, 3);
  for (Eigen::Index i = 0; i < m; ++i) out.points.row(i) = cloud.points.row(picked[static_cast<std::size_t>(i)]);
  return out;
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double variance, std::uint64_t seed) {
  require_points(cloud, 1, "add_gaussian_noise");
  if (variance < 0.0) {
    throw Error(Errc::negative_variance, "variance must be >= 0");
  }
  PointCloud out = cloud;
  if (variance == 0.0) return out;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    for (int c = 0; c < 3; ++c) out.points(i, c) += noise(rng);
  }
  return out;
}

PointCloud rigid_transform(const PointCloud& cloud, const Mat3& rotation, const Vec3& translation) {
  require_points(cloud, 1, "rigid_transform");
  const double defect = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (defect > 1e-9) {
    std::ostringstream msg;
    msg << "R^T R deviates from identity by " << defect;
    throw Error(Errc::non_orthonormal_rotation, msg.str());
  }
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points = cloud.points * rotation.transpose();
  out.points.rowwise() += translation.transpose();
  return out;
}

// --- text formats ----------------------------------------------------------

PointCloud read_xyz(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());
  PointCloud cloud;
  std::vector<Vec3> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    Vec3 p;
    if (!(fields >> p.x() >> p.y() >> p.z())) {
      throw Error(Errc::io, file.string() + ":" + std::to_string(lineno) + ": expected three decimals");
    }
    rows.push_back(p);
  }
  cloud.points.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (Eigen::Index i = 0; i < cloud.size(); ++i) cloud.points.row(i) = rows[static_cast<std::size_t>(i)].transpose();
  return cloud;
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write " + file.string());
  char buf[96];
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    // %.17g keeps doubles exact across a write/read round trip
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", cloud.points(i, 0), cloud.points(i, 1),
                  cloud.points(i, 2));
    out << buf;
  }
  if (!out) throw Error(Errc::io, "short write to " + file.string());
}

CorrespondenceMap read_correspondence(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());
  CorrespondenceMap map;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      map.push_back(static_cast<std::int32_t>(std::stol(line)));
    } catch (const std::exception&) {
      throw Error(Errc::io, file.string() + ":" + std::to_string(lineno) + ": expected an integer");
    }
  }
  return map;
}

void write_correspondence(const CorrespondenceMap& map, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write " + file.string());
  for (std::int32_t idx : map) out << idx << "\n";
  if (!out) throw Error(Errc::io, "short write to " + file.string());
}

void check_correspondence(const CorrespondenceMap& map, Eigen::Index n) {
  if (static_cast<Eigen::Index>(map.size()) != n) {
    throw Error(Errc::missing_correspondence,
                "correspondence has " + std::to_string(map.size()) + " entries, expected " + std::to_string(n));
  }
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (std::int32_t idx : map) {
    if (idx < 0 || idx >= n || seen[static_cast<std::size_t>(idx)]) {
      throw Error(Errc::missing_correspondence, "correspondence is not a bijection on {0..N-1}");
    }
    seen[static_cast<std::size_t>(idx)] = true;
  }
}

SequenceManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(Errc::io, "cannot open " + file.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::io, file.string() + ": " + e.what());
  }
  if (!doc.contains("frames") || !doc["frames"].is_array()) {
    throw Error(Errc::io, file.string() + ": manifest needs a \"frames\" array");
  }
  SequenceManifest manifest;
  const auto base = file.parent_path();
  for (const auto& entry : doc["frames"]) {
    manifest.frame_paths.push_back(base / entry.get<std::string>());
  }
  if (doc.contains("correspondence") && !doc["correspondence"].is_null()) {
    manifest.correspondence_path = base / doc["correspondence"].get<std::string>();
  }
  return manifest;
}

void write_manifest(const SequenceManifest& manifest, const std::filesystem::path& file) {
  nlohmann::json doc;
  doc["frames"] = nlohmann::json::array();
  const auto base = file.parent_path();
  for (const auto& p : manifest.frame_paths) {
    doc["frames"].push_back(p.lexically_relative(base).generic_string());
  }
  if (manifest.correspondence_path) {
    doc["correspondence"] = manifest.correspondence_path->lexically_relative(base).generic_string();
  }
  std::ofstream out(file);
  if (!out) throw Error(Errc::io, "cannot write " + file.string());
  out << doc.dump(2) << "\n";
  if (!out) throw Error(Errc::io, "short write to " + file.string());
}

SequenceWindow load_sequence(const SequenceManifest& manifest) {
  SequenceWindow window;
  window.frames.reserve(manifest.frame_paths.size());
  for (std::size_t t = 0; t < manifest.frame_paths.size(); ++t) {
    PointCloud frame = read_xyz(manifest.frame_paths[t]);
    frame.frame_id = static_cast<int>(t);
    if (!window.frames.empty() && frame.size() != window.frames.front().size()) {
      throw Error(Errc::shape_mismatch, "all frames of a sequence must share the same point count");
    }
    window.frames.push_back(std::move(frame));
  }
  if (manifest.correspondence_path && window.frames.size() >= 2) {
    CorrespondenceMap map = read_correspondence(*manifest.correspondence_path);
    check_correspondence(map, window.frames.front().size());
    window.correspondences =
        std::vector<CorrespondenceMap>(window.frames.size() - 1, map);
  }
  return window;
}

}  // namespace geokp
