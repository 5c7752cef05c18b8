#include "cardiofuse/errors.hpp"

namespace cardiofuse {

const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad_magic";
    case FormatErrorKind::kVersionMismatch: return "version_mismatch";
    case FormatErrorKind::kTruncated: return "truncated";
    case FormatErrorKind::kDuplicateName: return "duplicate_name";
    case FormatErrorKind::kBadDtype: return "bad_dtype";
    case FormatErrorKind::kMalformed: return "malformed";
  }
  return "unknown";
}

FormatError::FormatError(FormatErrorKind kind, std::uint64_t offset, const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + " at byte offset " + std::to_string(offset) + ": " + detail),
      kind_(kind),
      offset_(offset) {}

}  // namespace cardiofuse
