// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rlbind {

// Entry point of the `rlbind` tool. Returns the process exit status; on
// failure writes a single "error: <kind>: <message>" line to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rlbind
