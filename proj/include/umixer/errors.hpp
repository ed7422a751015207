#pragma once

#include <stdexcept>
#include <string>

namespace umixer {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Out-of-range scalar argument (dropout rate, epsilon, ...).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Caller broke an API precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid or inconsistent configuration (unknown keys, bad splits, P > L, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or insufficient input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// NaN/inf during training or a failed numerical check.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unreadable, truncated or corrupted checkpoint.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace umixer
