#include "fresh/error.h"

namespace fresh {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kEmptyDocument:
      return "empty_document";
    case ErrorKind::kParse:
      return "parse";
    case ErrorKind::kSchema:
      return "schema";
    case ErrorKind::kConfig:
      return "config";
    case ErrorKind::kNumeric:
      return "numeric";
    case ErrorKind::kTraining:
      return "training";
    case ErrorKind::kFaithfulness:
      return "faithfulness";
    case ErrorKind::kIo:
      return "io";
    case ErrorKind::kInvalidArgument:
      return "invalid_argument";
  }
  return "unknown";
}

}  // namespace fresh
