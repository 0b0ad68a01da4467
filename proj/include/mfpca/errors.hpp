#pragma once

// Error hierarchy shared by the library and the command-line tool.  Every
// condition that aborts a computation is reported through an exception derived
// from mfpca::Error; the attached code doubles as the process exit status so
// that scripted callers can distinguish failure modes.

#include <stdexcept>
#include <string>

namespace mfpca {

class Error : public std::runtime_error {
public:
    Error(const std::string& message, int code)
        : std::runtime_error(message), code_(code) {}

    int exit_code() const noexcept { return code_; }

private:
    int code_;
};

#define MFPCA_DEFINE_ERROR(Name, Code)                      \
    class Name : public Error {                             \
    public:                                                 \
        explicit Name(const std::string& message)           \
            : Error(message, Code) {}                       \
        static constexpr int code = Code;                   \
    };

// Invalid user input (bad flag values, malformed requests).
MFPCA_DEFINE_ERROR(InvalidArgument, 2)
// Curves that are expected to share a sampling grid do not.
MFPCA_DEFINE_ERROR(GridMismatch, 10)
// A visit level with no observed subjects.
MFPCA_DEFINE_ERROR(EmptyVisit, 11)
// No subject contributes two visits, so the between-subject covariance has
// no information.
MFPCA_DEFINE_ERROR(NoWithinPairs, 12)
// Fewer observations than the requested model can support.
MFPCA_DEFINE_ERROR(InsufficientData, 13)
// Dimension mismatch between containers that must conform.
MFPCA_DEFINE_ERROR(ShapeError, 14)
// A matrix that must be symmetric is not, beyond tolerance.
MFPCA_DEFINE_ERROR(AsymmetricInput, 15)
// All variation is zero where positive variation is required.
MFPCA_DEFINE_ERROR(NoVariance, 16)
// A variance parameter that must be positive is not.
MFPCA_DEFINE_ERROR(InvalidVariance, 17)
// A linear system that must be solvable is singular.
MFPCA_DEFINE_ERROR(SingularSystem, 18)
// Logistic regression diverged in a way consistent with separable data.
MFPCA_DEFINE_ERROR(SeparationDetected, 19)
// Design matrix is rank deficient.
MFPCA_DEFINE_ERROR(RankDeficient, 20)
// Index outside the valid range of a sequence.
MFPCA_DEFINE_ERROR(IndexError, 21)
// The same (subject, visit, t) key appears twice in an input file.
MFPCA_DEFINE_ERROR(DuplicateRow, 22)
// A value lies outside its declared range.
MFPCA_DEFINE_ERROR(RangeError, 23)
// File-system or parse failure.
MFPCA_DEFINE_ERROR(IoError, 25)

#undef MFPCA_DEFINE_ERROR

}  // namespace mfpca
