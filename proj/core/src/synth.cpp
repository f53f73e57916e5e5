// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/synth.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>

namespace geokp {

namespace {

// Bending cylinder geometry. The tube must stay wide relative to the k-NN
// edge length (no spurious cross-tube edges) yet thin relative to the bend
// radius (near-isometry at moderate amplitude).
constexpr double kTubeRadius = 0.025;
constexpr double kTubeLength = 1.0;
// curvature at amplitude a; a=1 bends the axis almost into a full circle so
// the tube ends come within touching distance (the shortcut failure case)
double bend_curvature(double amplitude) {
  return 2.05 * std::numbers::pi * std::pow(amplitude, 1.3);
}

// Articulated chain: two tubes of half-length each, hinged at the origin.
constexpr double kChainRadius = 0.06;
constexpr double kChainHalfLength = 0.5;
constexpr double kChainMaxAngle = std::numbers::pi / 2;

// Breathing ellipsoid semi-axes and maximum radial growth.
constexpr double kEllipsoidA = 0.5;
constexpr double kEllipsoidB = 0.38;
constexpr double kEllipsoidC = 0.3;
constexpr double kBreathScale = 0.4;

struct NormalizeTransform {
  Vec3 centroid = Vec3::Zero();
  double scale = 1.0;
};

NormalizeTransform transform_of(const PointMatrix& points) {
  NormalizeTransform t;
  t.centroid = points.colwise().mean().transpose();
  const Aabb box = bounding_box(points);
  t.scale = box.extents().maxCoeff();
  return t;
}

void apply(const NormalizeTransform& t, PointMatrix& points) {
  points = (points.rowwise() - t.centroid.transpose()) / t.scale;
}

// Point on a tube of curvature kappa: the axis is the arc-length
// parameterized circle through the origin, bending in the x-z plane.
Vec3 bent_tube_point(double theta, double s, double radius, double kappa) {
  const double co = radius * std::cos(theta);
  const double si = radius * std::sin(theta);
  if (std::abs(kappa) < 1e-12) {
    return {co, si, s};
  }
  const double c = std::cos(kappa * s);
  const double n = std::sin(kappa * s);
  Vec3 axis{(1.0 - c) / kappa, 0.0, n / kappa};
  Vec3 normal{c, 0.0, -n};
  Vec3 binormal{0.0, 1.0, 0.0};
  return axis + co * normal + si * binormal;
}

// Stratified (jittered-grid) sampling of a tube surface. Plain i.i.d.
// sampling leaves voids that make the k-NN graph unstable under deformation.
void sample_tube(Eigen::Index n, double radius, double length, std::mt19937_64& rng,
                 std::vector<double>& theta, std::vector<double>& arc) {
  const double aspect = length / (2.0 * std::numbers::pi * radius);
  const auto around = std::max<Eigen::Index>(
      4, static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(n) / aspect))));
  const Eigen::Index along = (n + around - 1) / around;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  theta.resize(static_cast<std::size_t>(n));
  arc.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto cell_theta = static_cast<double>(i % around);
    const auto cell_arc = static_cast<double>(i / around);
    theta[static_cast<std::size_t>(i)] =
        2.0 * std::numbers::pi * (cell_theta + uniform(rng)) / static_cast<double>(around);
    arc[static_cast<std::size_t>(i)] =
        length * (cell_arc + uniform(rng)) / static_cast<double>(along);
  }
}

std::vector<PointMatrix> make_bending_cylinder(const DeformSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const auto n = spec.n_points;
  std::vector<double> theta;
  std::vector<double> arc;
  sample_tube(n, kTubeRadius, kTubeLength, rng, theta, arc);

  const double kappa_end = bend_curvature(spec.amplitude);
  std::vector<PointMatrix> frames;
  for (Eigen::Index t = 0; t < spec.n_frames; ++t) {
    const double kappa = kappa_end * static_cast<double>(t) / static_cast<double>(spec.n_frames - 1);
    PointMatrix pts(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      pts.row(i) = bent_tube_point(theta[static_cast<std::size_t>(i)],
                                   arc[static_cast<std::size_t>(i)], kTubeRadius, kappa)
                       .transpose();
    }
    frames.push_back(std::move(pts));
  }
  return frames;
}

std::vector<PointMatrix> make_articulated_chain(const DeformSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  const auto n = spec.n_points;
  std::vector<double> theta;
  std::vector<double> arc;
  sample_tube(n, kChainRadius, 2.0 * kChainHalfLength, rng, theta, arc);
  std::vector<Vec3> base(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    base[static_cast<std::size_t>(i)] = Vec3{kChainRadius * std::cos(theta[static_cast<std::size_t>(i)]),
                                             kChainRadius * std::sin(theta[static_cast<std::size_t>(i)]),
                                             arc[static_cast<std::size_t>(i)] - kChainHalfLength};
  }

  const double angle_end = kChainMaxAngle * spec.amplitude;
  std::vector<PointMatrix> frames;
  for (Eigen::Index t = 0; t < spec.n_frames; ++t) {
    const double angle = angle_end * static_cast<double>(t) / static_cast<double>(spec.n_frames - 1);
    Mat3 hinge = Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix();
    PointMatrix pts(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3& p = base[static_cast<std::size_t>(i)];
      pts.row(i) = (p.z() > 0.0 ? Vec3(hinge * p) : p).transpose();
    }
    frames.push_back(std::move(pts));
  }
  return frames;
}

std::vector<PointMatrix> make_breathing_ellipsoid(const DeformSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto n = spec.n_points;
  std::vector<Vec3> dirs(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3 u{gauss(rng), gauss(rng), gauss(rng)};
    while (u.norm() < 1e-8) u = Vec3{gauss(rng), gauss(rng), gauss(rng)};
    dirs[static_cast<std::size_t>(i)] = u.normalized();
  }

  std::vector<PointMatrix> frames;
  for (Eigen::Index t = 0; t < spec.n_frames; ++t) {
    const double rho = 1.0 + kBreathScale * spec.amplitude * static_cast<double>(t) /
                                 static_cast<double>(spec.n_frames - 1);
    PointMatrix pts(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3& u = dirs[static_cast<std::size_t>(i)];
      pts.row(i) = rho * Vec3{kEllipsoidA * u.x(), kEllipsoidB * u.y(), kEllipsoidC * u.z()}.transpose();
    }
    frames.push_back(std::move(pts));
  }
  return frames;
}

}  // namespace

Generator generator_from_name(const std::string& name) {
  if (name == "bend" || name == "bending_cylinder") return Generator::bending_cylinder;
  if (name == "chain" || name == "articulated_chain") return Generator::articulated_chain;
  if (name == "breathe" || name == "breathing_ellipsoid") return Generator::breathing_ellipsoid;
  throw Error(Errc::invalid_spec, "unknown generator '" + name + "'");
}

const char* to_string(Generator generator) {
  switch (generator) {
    case Generator::bending_cylinder: return "bending_cylinder";
    case Generator::articulated_chain: return "articulated_chain";
    case Generator::breathing_ellipsoid: return "breathing_ellipsoid";
  }
  return "unknown";
}

SequenceWindow generate(const DeformSpec& spec) {
  if (spec.n_points < 16 || spec.n_frames < 2 || spec.amplitude < 0.0 || spec.amplitude > 1.0) {
    throw Error(Errc::invalid_spec,
                "need n_points >= 16, n_frames >= 2, amplitude in [0, 1]");
  }

  std::vector<PointMatrix> frames;
  switch (spec.generator) {
    case Generator::bending_cylinder: frames = make_bending_cylinder(spec); break;
    case Generator::articulated_chain: frames = make_articulated_chain(spec); break;
    case Generator::breathing_ellipsoid: frames = make_breathing_ellipsoid(spec); break;
  }

  // one transform for the whole sequence; per-frame normalization would
  // rescale geodesic distances and destroy the isometry the deformation
  // losses rely on
  const NormalizeTransform t = transform_of(frames.front());
  SequenceWindow window;
  for (Eigen::Index i = 0; i < spec.n_frames; ++i) {
    apply(t, frames[static_cast<std::size_t>(i)]);
    PointCloud cloud;
    cloud.points = std::move(frames[static_cast<std::size_t>(i)]);
    cloud.frame_id = static_cast<int>(i);
    window.frames.push_back(std::move(cloud));
  }

  CorrespondenceMap identity(static_cast<std::size_t>(spec.n_points));
  for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = static_cast<std::int32_t>(i);
  window.correspondences =
      std::vector<CorrespondenceMap>(static_cast<std::size_t>(spec.n_frames - 1), identity);
  return window;
}

}  // namespace geokp
