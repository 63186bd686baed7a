#pragma once

#include <stdexcept>
#include <string>

namespace ftrack {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corpus file is unreadable or violates the schema.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Corpus is well-formed JSON but internally inconsistent (dangling frame ids, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Gold annotation cannot be mapped onto the model's output layout.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace ftrack
