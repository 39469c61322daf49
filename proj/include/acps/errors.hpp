#pragma once

#include <stdexcept>
#include <string>

namespace acps {

/// Malformed or inconsistent on-disk data (FSTK stacks, model files,
/// annotations).
class FormatError : public std::runtime_error {
 public:
  enum class Reason { bad_magic, truncated, non_finite, version_mismatch, corrupt, parse };

  FormatError(Reason reason, const std::string& what)
      : std::runtime_error(what), reason_(reason) {}

  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

/// A model component required by the requested operation is absent or fails
/// its manifest hash.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optimizers or fitters that could not produce a usable result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace acps
