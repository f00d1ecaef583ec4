// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace lor2c::cli {

// Entry point behind the lor2c binary. Exit codes: 0 success, 2 config error,
// 3 runtime/numeric error.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args without argv[0]

}  // namespace lor2c::cli
