#include "fame/error.hpp"

namespace fame {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::not_found: return "not-found";
    case ErrorKind::degenerate_point: return "degenerate-point";
    case ErrorKind::training_diverged: return "training-diverged";
    case ErrorKind::diverged: return "diverged";
    case ErrorKind::incompatible_pool: return "incompatible-pool";
    case ErrorKind::malformed_pool: return "malformed-pool";
    case ErrorKind::malformed_file: return "malformed-file";
    case ErrorKind::pool_build_failed: return "pool-build-failed";
    case ErrorKind::scorer_failed: return "scorer-failed";
    case ErrorKind::io_error: return "io-error";
  }
  return "unknown";
}

namespace {

std::string compose(ErrorKind kind, const std::string& message, std::optional<std::int64_t> index) {
  std::string out{to_string(kind)};
  out += ": ";
  out += message;
  if (index) {
    out += " [" + std::to_string(*index) + "]";
  }
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, const std::string& message, std::optional<std::int64_t> index)
    : std::runtime_error(compose(kind, message, index)), kind_(kind), index_(index) {}

void fail(ErrorKind kind, const std::string& message, std::optional<std::int64_t> index) {
  throw Error(kind, message, index);
}

}  // namespace fame
