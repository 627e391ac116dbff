#pragma once

#include <stdexcept>
#include <string>

namespace dupless {

// Error categories map onto the CLI exit codes: usage -> 1, data -> 2,
// numerical -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

// imagecore
struct PatchTooLarge : DataError { using DataError::DataError; };
struct OddPatchSide : DataError { using DataError::DataError; };
struct DimensionMismatch : DataError { using DataError::DataError; };

// pretext / manifests
struct EmptyManifest : DataError { using DataError::DataError; };

// nnet
struct ShapeMismatch : DataError { using DataError::DataError; };
struct LabelOutOfRange : DataError { using DataError::DataError; };
struct EmptyDataset : DataError { using DataError::DataError; };
struct DivergenceDetected : NumericError { using NumericError::NumericError; };

// embeddings
struct DimMismatch : DataError { using DataError::DataError; };
struct EmptyList : DataError { using DataError::DataError; };
struct BadMagic : DataError { using DataError::DataError; };
struct TruncatedFile : DataError { using DataError::DataError; };
struct IndexMismatch : DataError { using DataError::DataError; };

// classify
struct SingleClassInput : DataError { using DataError::DataError; };

// projection
struct PerplexityTooLarge : DataError { using DataError::DataError; };
struct DegenerateDistances : DataError { using DataError::DataError; };
struct NonFiniteGradient : NumericError { using NumericError::NumericError; };

// evaluation
struct TooFewSlices : DataError { using DataError::DataError; };
struct LengthMismatch : DataError { using DataError::DataError; };
struct MissingEmbeddings : DataError { using DataError::DataError; };

// file plumbing
struct IoError : DataError { using DataError::DataError; };

}  // namespace dupless
