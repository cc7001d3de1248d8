// Copyright 2026 The hierform Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hierform {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,      // I/O, format or numeric errors
  kExitUsage = 2,        // bad flags or configuration
  kExitCheckFailed = 3,  // gradcheck found a mismatch
};

// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hierform
