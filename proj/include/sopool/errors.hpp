#pragma once

#include <stdexcept>

namespace sopool {

/// Thrown when an operation is called outside its contract: double free,
/// a pseudo or out-of-range slot index, dereferencing/advancing an end
/// cursor, and similar caller mistakes that the structure can detect.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace sopool
