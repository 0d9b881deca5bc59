#pragma once

#include <stdexcept>
#include <string>

#include "json.hpp"

namespace biaslens {

/// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a precondition (bad index, empty input, unknown format).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// The backend cannot provide a requested capability (hidden states, encoding).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// A model backend failed to answer. Carries enough metadata to retry.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, int attempts, int status, bool retryable)
      : Error(what), attempts_(attempts), status_(status), retryable_(retryable) {}

  int attempts() const { return attempts_; }
  /// Transport status (HTTP code) or -1 when no response was received.
  int status() const { return status_; }
  bool retryable() const { return retryable_; }

 private:
  int attempts_;
  int status_;
  bool retryable_;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Corpus-level failure: nothing retained, unequal language slices, I/O.
class CorpusError : public Error {
 public:
  using Error::Error;
};

/// Normalization constant is zero, so NBS is undefined.
class DegenerateCorpusError : public Error {
 public:
  using Error::Error;
};

class FitDataError : public Error {
 public:
  using Error::Error;
};

class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

/// Input text could not be parsed. `location` is human readable ("line 3, column 7").
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string location)
      : Error(what + " at " + location), location_(std::move(location)) {}
  const std::string& location() const { return location_; }

 private:
  std::string location_;
};

/// Fine-tuning job failed; the manifest recorded so far is preserved.
class JobError : public Error {
 public:
  JobError(const std::string& what, nlohmann::json manifest)
      : Error(what), manifest_(std::move(manifest)) {}
  const nlohmann::json& manifest() const { return manifest_; }

 private:
  nlohmann::json manifest_;
};

}  // namespace biaslens
