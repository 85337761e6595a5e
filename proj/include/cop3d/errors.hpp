#pragma once

#include <stdexcept>
#include <string>

namespace cop3d {

// Base class for all library errors. Subtypes name the failure mode so
// callers and tests can catch them precisely.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// geometry
struct NonPositiveDepth : Error { using Error::Error; };
struct DegenerateDepth : Error { using Error::Error; };
struct UndefinedCoupling : Error { using Error::Error; };
struct NoRootInBracket : Error { using Error::Error; };

// micronet
struct ShapeMismatch : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };

// cop / config
struct InvalidConfig : Error { using Error::Error; };

// matching
struct EmptyMatrix : Error { using Error::Error; };
struct InvalidAssignment : Error { using Error::Error; };

// synth
struct GenerationExhausted : Error { using Error::Error; };
struct DegenerateVariance : Error { using Error::Error; };

// kitti_io
struct FieldCountError : Error { using Error::Error; };
struct NumericParseError : Error { using Error::Error; };
struct MissingP2 : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// eval
struct NoGroundTruth : Error { using Error::Error; };
struct TooFewSamples : Error { using Error::Error; };
struct MissingRun : Error { using Error::Error; };

// experiment config files (missing file, unknown key, bad value)
struct ConfigError : Error { using Error::Error; };

} // namespace cop3d
