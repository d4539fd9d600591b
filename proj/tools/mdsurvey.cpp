// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The mdsurvey Authors

#include "mdsurvey/cli.hpp"

int main(int argc, char** argv) { return mdsurvey::runCli(argc, argv); }
