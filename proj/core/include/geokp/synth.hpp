// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "geokp/pcloud.hpp"

namespace geokp {

/// Synthetic deformation families.
///
///   bending_cylinder    tube whose axis bends along a circular arc; arc-length
///                       parameterization keeps the surface close to isometric
///   articulated_chain   two rigid tubes joined at a hinge whose angle sweeps
///   breathing_ellipsoid radial scaling; intentionally violates geodesic
///                       preservation and serves as the negative control
enum class Generator {
  bending_cylinder,
  articulated_chain,
  breathing_ellipsoid,
};

Generator generator_from_name(const std::string& name);
const char* to_string(Generator generator);

struct DeformSpec {
  Generator generator = Generator::bending_cylinder;
  Eigen::Index n_points = 512;
  Eigen::Index n_frames = 4;
  double amplitude = 0.5;  // in [0, 1]
  std::uint64_t seed = 0;
};

/// Generates n_frames frames of the same n_points surface samples carried by
/// the deformation field. Correspondences are identity maps by construction.
/// All frames share one normalization transform computed on frame 0, so the
/// sequence keeps a consistent scale.
SequenceWindow generate(const DeformSpec& spec);

}  // namespace geokp
