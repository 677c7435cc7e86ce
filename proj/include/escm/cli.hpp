#pragma once

// The `escm` command line. Every subcommand prints one JSON report on standard output:
//   {"command": {...}, "diagnostics": {...}, "model_hash": "fnv1a64:...", "results": {...},
//    "timing": {...}}
// with keys sorted and numbers in shortest round-trip form. Exit codes: 0 success,
// 1 invalid model file, 2 solver or domain failure, 3 bad query, usage or I/O.

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace escm::cli {

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace escm::cli
