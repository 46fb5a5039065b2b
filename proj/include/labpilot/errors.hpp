#pragma once

#include <stdexcept>
#include <string>

namespace labpilot {

// Error taxonomy shared by all modules. Transient errors are retried by the
// run controller; input errors surface as exit code 2 at the CLI, everything
// else as exit code 3.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Rejected input: bad arguments, unmet preconditions, malformed files.
class InputError : public Error {
public:
  using Error::Error;
};

// Retryable backend failure (unreachable service, flaky adapter).
class TransientError : public Error {
public:
  using Error::Error;
};

// Key collision or similar state conflict needing manual resolution.
class ConflictError : public Error {
public:
  using Error::Error;
};

// A scripted mock ran out of script: the test itself is misconfigured.
class TestConfigError : public Error {
public:
  using Error::Error;
};

// Unrecoverable pipeline failure; the run stops.
class FatalError : public Error {
public:
  using Error::Error;
};

}  // namespace labpilot
