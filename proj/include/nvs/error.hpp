#pragma once

#include <stdexcept>
#include <string>

namespace nvs {

// Exit codes double as error categories; the CLI maps them 1:1.
enum class ErrorCode : int {
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
  kCheckpoint = 5,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "config_error";
    case ErrorCode::kData: return "data_error";
    case ErrorCode::kDivergence: return "numeric_divergence";
    case ErrorCode::kCheckpoint: return "incompatible_checkpoint";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCode::kConfig, what) {}
};
// Data failures carry a finer reason so callers can tell them apart.
enum class DataFault { kGeneric, kVersion, kMissingCameras, kCountMismatch, kParse, kMissingFile };

inline const char* data_fault_name(DataFault f) {
  switch (f) {
    case DataFault::kGeneric: return "generic";
    case DataFault::kVersion: return "version_mismatch";
    case DataFault::kMissingCameras: return "missing_camera_file";
    case DataFault::kCountMismatch: return "count_mismatch";
    case DataFault::kParse: return "parse_error";
    case DataFault::kMissingFile: return "missing_file";
  }
  return "unknown";
}

struct DataError : Error {
  explicit DataError(const std::string& what, DataFault fault = DataFault::kGeneric)
      : Error(ErrorCode::kData, what), fault(fault) {}
  DataFault fault;
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what) : Error(ErrorCode::kDivergence, what) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& what) : Error(ErrorCode::kCheckpoint, what) {}
};

// Contract violations inside the library (wrong shapes, negative densities...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

#define NVS_CHECK(cond, msg)                                                    \
  do {                                                                          \
    if (!(cond)) throw ::nvs::ContractError(std::string(__func__) + ": " + (msg)); \
  } while (0)

}  // namespace nvs
