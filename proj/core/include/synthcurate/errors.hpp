#pragma once

#include <stdexcept>
#include <string>

namespace synthcurate {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a precondition (bad k, dimension mismatch, empty input...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Configuration file failed to parse or validate.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A backend answered but the request failed (non-2xx, bad payload, undecodable image).
class BackendError : public Error {
 public:
  using Error::Error;
};

// Transport-level failure: the backend could not be reached at all.
class BackendUnreachable : public BackendError {
 public:
  using BackendError::BackendError;
};

// Persistent state (journal, scored-pair files) is unreadable or inconsistent.
class CorruptData : public Error {
 public:
  using Error::Error;
};

// A stage prerequisite artifact is missing from the workdir.
class MissingArtifact : public Error {
 public:
  MissingArtifact(std::string artifact, std::string producer)
      : Error("missing artifact '" + artifact + "' (produced by `" + producer + "`)"),
        artifact_(std::move(artifact)),
        producer_(std::move(producer)) {}

  const std::string& artifact() const noexcept { return artifact_; }
  const std::string& producer() const noexcept { return producer_; }

 private:
  std::string artifact_;
  std::string producer_;
};

}  // namespace synthcurate
