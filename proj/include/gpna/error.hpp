#pragma once

#include <stdexcept>
#include <string>

namespace gpna {

/// Malformed configuration: bad bank parameters, duplicate head ids, schema violations.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data that does not satisfy an operation's preconditions.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Tensor shapes that do not agree.
class ShapeError : public InputError {
public:
    using InputError::InputError;
};

/// An attention or softmax mask that leaves a row with no unmasked entry.
class MaskError : public InputError {
public:
    using InputError::InputError;
};

/// Metric evaluated on data where it is undefined (e.g. R² with constant target).
class UndefinedMetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Non-finite loss or parameters during training.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or unreadable files on disk.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gpna
