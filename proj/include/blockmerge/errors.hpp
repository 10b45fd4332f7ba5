#pragma once

#include <stdexcept>
#include <string>

namespace blockmerge {

// Base of all library errors. Subclasses map onto the CLI exit-code
// contract: UsageError -> 1, DataError -> 2, EvaluatorError -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct EvaluatorError : Error {
    using Error::Error;
};

// tensorio
struct MalformedHeader : DataError {
    using DataError::DataError;
};
struct UnsupportedDtype : DataError {
    using DataError::DataError;
};
struct TruncatedFile : DataError {
    using DataError::DataError;
};
struct IoFailure : DataError {
    using DataError::DataError;
};

// merge_techniques / segmentor
struct ShapeMismatch : DataError {
    using DataError::DataError;
};
struct SignatureMismatch : DataError {
    using DataError::DataError;
};
struct MissingBase : UsageError {
    using UsageError::UsageError;
};
struct UnknownParameter : DataError {
    using DataError::DataError;
};

// optimizer
struct DimensionUnsupported : DataError {
    using DataError::DataError;
};
struct EmptyTrainingSet : DataError {
    using DataError::DataError;
};
struct NotFitted : DataError {
    using DataError::DataError;
};

// evaluation
struct MissingParameter : DataError {
    using DataError::DataError;
};
struct LengthMismatch : DataError {
    using DataError::DataError;
};
struct NonPositiveSource : DataError {
    using DataError::DataError;
};
struct EvaluatorFailure : EvaluatorError {
    using EvaluatorError::EvaluatorError;
};
struct NonFiniteLoss : EvaluatorError {
    using EvaluatorError::EvaluatorError;
};

}  // namespace blockmerge
