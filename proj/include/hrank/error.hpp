#pragma once

#include <stdexcept>
#include <string>

namespace hrank {

// Every failure raised by the toolkit derives from Error. The category
// drives the CLI exit code (usage and config problems exit with 2).
enum class ErrorKind {
  shape,
  state,
  config,
  usage,
  format,
  numeric,
  data,
  consistency,
  plan,
  diverged,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind);

#define HRANK_DEFINE_ERROR(Name, Kind)                 \
  class Name : public Error {                          \
   public:                                             \
    explicit Name(const std::string& what)             \
        : Error(ErrorKind::Kind, what) {}              \
  };

HRANK_DEFINE_ERROR(ShapeError, shape)
HRANK_DEFINE_ERROR(StateError, state)
HRANK_DEFINE_ERROR(ConfigError, config)
HRANK_DEFINE_ERROR(UsageError, usage)
HRANK_DEFINE_ERROR(FormatError, format)
HRANK_DEFINE_ERROR(NumericError, numeric)
HRANK_DEFINE_ERROR(DataError, data)
HRANK_DEFINE_ERROR(ConsistencyError, consistency)
HRANK_DEFINE_ERROR(PlanError, plan)
HRANK_DEFINE_ERROR(DivergedError, diverged)

#undef HRANK_DEFINE_ERROR

}  // namespace hrank
