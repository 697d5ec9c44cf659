#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace supcon_asr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using TokenSeq = std::vector<int>;

enum class ErrorKind {
  kInvalidArgument,
  kInsufficientData,
  kIo,
  kMalformedRecord,
  kTooShort,
  kShapeMismatch,
  kInfeasible,
  kTooLarge,
  kInvalidBeam,
  kLengthMismatch,
  kEmptyReference,
  kDegenerateProjection,
  kNoValidAnchors,
  kBadTemperature,
  kInsufficientTranscripts,
  kEmptyValidation,
  kEmptyCorpus,
  kUnknownToken,
  kNoEligibleTranscripts,
  kZeroVector,
  kTranscriptSetMismatch,
};

const char* error_kind_name(ErrorKind kind);

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + what),
        kind_(kind),
        message_(what) {}

  ErrorKind kind() const { return kind_; }
  // what() without the kind prefix.
  const std::string& message() const { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

// splitmix64 finalizer; used to expand one root seed into independent
// per-purpose streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return mix_seed(mix_seed(root) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// log(exp(a) + exp(b)) with -inf as the additive identity.
double log_add(double a, double b);

// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace supcon_asr
