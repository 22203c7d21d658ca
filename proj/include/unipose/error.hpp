#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace unipose {

enum class ErrorKind {
  kFormat,      // malformed file contents
  kIo,          // open/read/write failure
  kValidation,  // precondition or invariant violated by caller input
  kDegenerate,  // geometric configuration has no unique solution
  kNoConsensus,
  kEstimationFailed,
  kProvider,
  kNumerical,   // non-finite value during optimization
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : Error(ErrorKind::kFormat, what + " (at byte " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::uint64_t byte_offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::kValidation, what);
}

}  // namespace unipose
