#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mtsf::cli {

/// Environment variable naming the default root for run directories.
inline constexpr const char* kOutputRootEnv = "MTSF_OUTPUT_ROOT";

/// Runs one command line (args[0] is the program name). Returns the process
/// exit code. Validation failures return nonzero before any output is written.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace mtsf::cli
