#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace aminn::cli {

// Exit codes: 0 success, 1 internal or numerical failure, 2 input or usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs `aminn <args...>`; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_file(const std::string& path);
std::string sha256_hex(const std::string& data);

}  // namespace aminn::cli
