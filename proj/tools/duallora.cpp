// Copyright 2026 The DualLoRA Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallora/cli.hpp"

int main(int argc, char** argv) { return duallora::run_cli(argc, argv); }
