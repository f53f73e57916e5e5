// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace geokp::cli {

/// Full command-line entry point. Returns the process exit code:
/// 0 success, 1 usage error, 2 runtime error (one parseable line on stderr).
int run(int argc, const char* const* argv);

}  // namespace geokp::cli
