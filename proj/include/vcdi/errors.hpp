#pragma once

#include <stdexcept>
#include <string>

namespace vcdi {

// Base class for all engine failures. The CLI maps ValidationError (and its
// subclasses) to exit code 1 and every other EngineError to exit code 2.
class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-supplied input: malformed files, schema violations, out-of-range
// parameters, unknown config keys, missing input files.
class ValidationError : public EngineError {
 public:
  using EngineError::EngineError;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Non-finite value produced during a tape evaluation. Carries the name of the
// first offending node.
class NumericError : public EngineError {
 public:
  explicit NumericError(const std::string& node_name)
      : EngineError("non-finite value at node " + node_name),
        node_name_(node_name) {}
  const std::string& node_name() const { return node_name_; }

 private:
  std::string node_name_;
};

class FeatureError : public EngineError {
 public:
  using EngineError::EngineError;
};

class PlanningError : public EngineError {
 public:
  using EngineError::EngineError;
};

class FitError : public EngineError {
 public:
  using EngineError::EngineError;
};

class IoError : public EngineError {
 public:
  using EngineError::EngineError;
};

}  // namespace vcdi
