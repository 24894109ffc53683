#pragma once

#include <stdexcept>
#include <string>

namespace cartooner {

// A caller broke a documented precondition: wrong colorspace, mismatched
// shapes, unknown names. Maps to HTTP 400 in the service.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A texture level (or other bounded control) outside its admissible range.
// Maps to HTTP 422 in the service.
class RangeError : public ContractError {
 public:
  using ContractError::ContractError;
};

// A named resource (style, checkpoint, file) does not exist.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed bytes: undecodable image, corrupt checkpoint, bad config file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cartooner
