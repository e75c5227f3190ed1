#ifndef SPECFLOW_COMMON_HPP
#define SPECFLOW_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace specflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error hierarchy. The CLI maps categories onto exit codes:
// ValidationError -> 1, IoError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

// Data validation
struct NegativeIntensity : ValidationError { using ValidationError::ValidationError; };
struct NonMonotoneGrid : ValidationError { using ValidationError::ValidationError; };
struct RaggedRow : ValidationError { using ValidationError::ValidationError; };
struct ParseError : ValidationError { using ValidationError::ValidationError; };
struct NegativeConcentration : ValidationError { using ValidationError::ValidationError; };
struct MissingSample : ValidationError { using ValidationError::ValidationError; };
struct InvalidConfig : ValidationError { using ValidationError::ValidationError; };
struct SizeMismatch : ValidationError { using ValidationError::ValidationError; };

// Factorization
struct RankOutOfBounds : ValidationError { using ValidationError::ValidationError; };
struct AllZeroInput : ValidationError { using ValidationError::ValidationError; };
struct ChannelMismatch : ValidationError { using ValidationError::ValidationError; };
struct RankMismatch : ValidationError { using ValidationError::ValidationError; };
struct NegativeLatent : ValidationError { using ValidationError::ValidationError; };

// Flow / regression
struct DimTooSmall : ValidationError { using ValidationError::ValidationError; };
struct DimMismatch : ValidationError { using ValidationError::ValidationError; };
struct EmptyDataset : ValidationError { using ValidationError::ValidationError; };
struct DegenerateVariance : ValidationError { using ValidationError::ValidationError; };
struct BTooSmall : ValidationError { using ValidationError::ValidationError; };

struct NonFiniteInput : NumericError { using NumericError::NumericError; };

// Persistence
struct MissingArtifact : IoError { using IoError::IoError; };

}  // namespace specflow

#endif
