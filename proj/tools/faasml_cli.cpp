// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0

#include "faasml/cli.hpp"

int main(int argc, char** argv) { return faasml::run_cli(argc, argv); }
