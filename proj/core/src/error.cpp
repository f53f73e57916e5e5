// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "geokp/error.hpp"

namespace geokp {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::precondition: return "precondition";
    case Errc::all_points_coincident: return "all_points_coincident";
    case Errc::invalid_count: return "invalid_count";
    case Errc::negative_variance: return "negative_variance";
    case Errc::non_orthonormal_rotation: return "non_orthonormal_rotation";
    case Errc::invalid_spec: return "invalid_spec";
    case Errc::k_too_large: return "k_too_large";
    case Errc::disconnected_graph: return "disconnected_graph";
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::size_mismatch: return "size_mismatch";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::empty_cloud: return "empty_cloud";
    case Errc::too_few_keypoints: return "too_few_keypoints";
    case Errc::too_few_frames: return "too_few_frames";
    case Errc::missing_correspondence: return "missing_correspondence";
    case Errc::invalid_dims: return "invalid_dims";
    case Errc::stale_cache: return "stale_cache";
    case Errc::missing_geodesic_cache: return "missing_geodesic_cache";
    case Errc::too_short_sequence: return "too_short_sequence";
    case Errc::bad_checkpoint: return "bad_checkpoint";
    case Errc::non_finite_loss: return "non_finite_loss";
    case Errc::usage: return "usage";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace geokp
