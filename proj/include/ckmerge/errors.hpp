#pragma once

#include <stdexcept>

namespace ckmerge {

// Error taxonomy mirrors the CLI exit codes:
//   ValidationError -> 1 (bad arguments, incompatible models, invalid manifests)
//   FormatError     -> 2 (malformed checkpoint or manifest files)
//   IoError         -> 2 (filesystem failures)
// anything else    -> 3 (internal invariant violation)
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ckmerge
