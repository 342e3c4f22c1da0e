#ifndef ODFLOW_ERRORS_HPP
#define ODFLOW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace odflow {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor / autodiff
struct ShapeMismatch : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };
struct NonScalarLoss : Error { using Error::Error; };

// Time discretization
struct OutOfWindow : Error { using Error::Error; };
struct OutOfPeriod : Error { using Error::Error; };
struct NegativeGap : Error { using Error::Error; };

// Ingestion
struct MalformedHeader : Error { using Error::Error; };
struct InsufficientHistory : Error { using Error::Error; };
struct KindMismatch : Error { using Error::Error; };
struct EmptyHistory : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct TooFewDays : Error { using Error::Error; };

// Model
struct WrongSequenceLength : Error { using Error::Error; };
struct AllRelationsDisabled : Error { using Error::Error; };

// Completion
struct NegativeDelayedInflow : Error { using Error::Error; };

// Harness
struct EmptyTrainingSet : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct NoHistory : Error { using Error::Error; };

// Generator / config / files
struct InvalidConfig : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace odflow

#endif
