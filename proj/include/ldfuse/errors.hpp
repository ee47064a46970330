#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ldfuse {

enum class ErrorKind {
  kFormat,
  kIo,
  kShape,
  kParameter,
  kDomain,
  kIndex,
  kSize,
  kState,
  kConfig,
  kUsage,
};

std::string_view to_string(ErrorKind kind);

// Base of every error raised by the library. The kind drives the CLI exit code
// and the "error" field of the structured stderr record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define LDFUSE_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

LDFUSE_DEFINE_ERROR(FormatError, ErrorKind::kFormat)
LDFUSE_DEFINE_ERROR(IoError, ErrorKind::kIo)
LDFUSE_DEFINE_ERROR(ShapeError, ErrorKind::kShape)
LDFUSE_DEFINE_ERROR(ParameterError, ErrorKind::kParameter)
LDFUSE_DEFINE_ERROR(DomainError, ErrorKind::kDomain)
LDFUSE_DEFINE_ERROR(IndexError, ErrorKind::kIndex)
LDFUSE_DEFINE_ERROR(SizeError, ErrorKind::kSize)
LDFUSE_DEFINE_ERROR(StateError, ErrorKind::kState)
LDFUSE_DEFINE_ERROR(ConfigError, ErrorKind::kConfig)
LDFUSE_DEFINE_ERROR(UsageError, ErrorKind::kUsage)

#undef LDFUSE_DEFINE_ERROR

}  // namespace ldfuse
