#pragma once

#include <stdexcept>

namespace coordx {

/// Invalid configuration or model specification.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit together.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (tensor blocks, checkpoints, PGM/PPM headers).
class ParseError : public IoError {
public:
    using IoError::IoError;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Request that does not make sense for the task at hand, e.g. rendering a 2D model.
class TaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace coordx
