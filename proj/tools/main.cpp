// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/cli.hpp"

int main(int argc, char** argv) { return lor2c::cli::run(argc, argv); }
