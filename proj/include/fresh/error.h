#ifndef FRESH_ERROR_H_
#define FRESH_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace fresh {

enum class ErrorKind {
  kEmptyDocument,
  kParse,
  kSchema,
  kConfig,
  kNumeric,
  kTraining,
  kFaithfulness,
  kIo,
  kInvalidArgument,
};

std::string_view error_kind_name(ErrorKind kind);

// Every failure raised by the library carries a kind so the CLI can map it
// to a machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace fresh

#endif  // FRESH_ERROR_H_
