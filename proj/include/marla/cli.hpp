#ifndef MARLA_CLI_HPP
#define MARLA_CLI_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace marla {

inline constexpr const char* kVersion = "0.1.0";

// Raised when a checkpoint's architecture does not match the config; mapped
// to exit code 3.
struct CheckpointMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exit codes: 0 success, 1 partial failure, 2 invalid input,
// 3 checkpoint/config mismatch.
int run_cli(const std::vector<std::string>& args);

}  // namespace marla

#endif  // MARLA_CLI_HPP
