#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fame {

enum class ErrorKind {
  invalid_argument,
  not_found,
  degenerate_point,
  training_diverged,
  diverged,
  incompatible_pool,
  malformed_pool,
  malformed_file,
  pool_build_failed,
  scorer_failed,
  io_error,
};

std::string_view to_string(ErrorKind kind);

// Every failure in the library is reported as a fame::Error. `index` carries
// the step index, byte offset or row number when the kind has one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::optional<std::int64_t> index = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::int64_t> index() const noexcept { return index_; }

 private:
  ErrorKind kind_;
  std::optional<std::int64_t> index_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message,
                       std::optional<std::int64_t> index = std::nullopt);

}  // namespace fame
