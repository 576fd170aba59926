#pragma once

#include <stdexcept>
#include <string>

namespace m2fedaqi {

/// Failure categories. The CLI maps each to a stable process exit code.
enum class ErrorKind {
  kDimension,
  kConfig,
  kCodec,
  kLayout,
  kData,
  kPartition,
  kAggregation,
  kProtocol,
  kAuth,
  kTimeout,
  kIo,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define M2FEDAQI_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(Kind, message) {}  \
  };

M2FEDAQI_DEFINE_ERROR(DimensionError, ErrorKind::kDimension)
M2FEDAQI_DEFINE_ERROR(ConfigError, ErrorKind::kConfig)
M2FEDAQI_DEFINE_ERROR(CodecError, ErrorKind::kCodec)
M2FEDAQI_DEFINE_ERROR(LayoutError, ErrorKind::kLayout)
M2FEDAQI_DEFINE_ERROR(DataError, ErrorKind::kData)
M2FEDAQI_DEFINE_ERROR(PartitionError, ErrorKind::kPartition)
M2FEDAQI_DEFINE_ERROR(AggregationError, ErrorKind::kAggregation)
M2FEDAQI_DEFINE_ERROR(ProtocolError, ErrorKind::kProtocol)
M2FEDAQI_DEFINE_ERROR(AuthError, ErrorKind::kAuth)
M2FEDAQI_DEFINE_ERROR(TimeoutError, ErrorKind::kTimeout)
M2FEDAQI_DEFINE_ERROR(IoError, ErrorKind::kIo)

#undef M2FEDAQI_DEFINE_ERROR

/// Process exit code contract: 0 ok, 2 config/usage, 3 data, 4 auth, 5 protocol/timeout.
int exit_code_for(ErrorKind kind);

}  // namespace m2fedaqi
