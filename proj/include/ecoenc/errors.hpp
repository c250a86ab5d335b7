#pragma once

#include <stdexcept>
#include <string>

namespace ecoenc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or axis disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity surfaced at an operation boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward twice on one graph.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

/// Requested exit is not part of the allowed exit set.
class PolicyError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Artifacts were produced from different parent checkpoints.
class ProvenanceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage ran before its upstream artifact existed.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace ecoenc
