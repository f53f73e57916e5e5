// Copyright 2026 The geokp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return geokp::cli::run(argc, argv); }
