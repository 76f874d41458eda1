#pragma once

#include <stdexcept>
#include <string>

namespace gazeseq {

/// Precondition violated by caller-supplied data.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A statistical test was asked to run on data carrying no information
/// (e.g. all paired differences zero).
class DegenerateInput : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

/// Tensor shapes do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Reading or writing files failed.
class PersistenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Persisted data is missing or malformed.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Synthetic data failed its own invariants.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace gazeseq
