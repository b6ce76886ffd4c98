#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dreid::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;  // bad input, bad flags
inline constexpr int kExitIo = 2;

inline constexpr const char* kProgram = "degrade-reid";
inline constexpr const char* kVersion = "1.0.0";

/// Runs one subcommand. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dreid::cli
