// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace geokp {

/// Stable error codes surfaced by every module. The CLI maps these to
/// machine-parseable one-line diagnostics on stderr.
enum class Errc {
  precondition,
  all_points_coincident,
  invalid_count,
  negative_variance,
  non_orthonormal_rotation,
  invalid_spec,
  k_too_large,
  disconnected_graph,
  io,
  bad_magic,
  size_mismatch,
  shape_mismatch,
  empty_cloud,
  too_few_keypoints,
  too_few_frames,
  missing_correspondence,
  invalid_dims,
  stale_cache,
  missing_geodesic_cache,
  too_short_sequence,
  bad_checkpoint,
  non_finite_loss,
  usage,
};

const char* to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace geokp
