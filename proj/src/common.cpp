#include "supcon_asr/common.hpp"

#include <cmath>
#include <limits>

namespace supcon_asr {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kInsufficientData: return "InsufficientData";
    case ErrorKind::kIo: return "IoError";
    case ErrorKind::kMalformedRecord: return "MalformedRecord";
    case ErrorKind::kTooShort: return "TooShort";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kInfeasible: return "Infeasible";
    case ErrorKind::kTooLarge: return "TooLarge";
    case ErrorKind::kInvalidBeam: return "InvalidBeam";
    case ErrorKind::kLengthMismatch: return "LengthMismatch";
    case ErrorKind::kEmptyReference: return "EmptyReference";
    case ErrorKind::kDegenerateProjection: return "DegenerateProjection";
    case ErrorKind::kNoValidAnchors: return "NoValidAnchors";
    case ErrorKind::kBadTemperature: return "BadTemperature";
    case ErrorKind::kInsufficientTranscripts: return "InsufficientTranscripts";
    case ErrorKind::kEmptyValidation: return "EmptyValidation";
    case ErrorKind::kEmptyCorpus: return "EmptyCorpus";
    case ErrorKind::kUnknownToken: return "UnknownToken";
    case ErrorKind::kNoEligibleTranscripts: return "NoEligibleTranscripts";
    case ErrorKind::kZeroVector: return "ZeroVector";
    case ErrorKind::kTranscriptSetMismatch: return "TranscriptSetMismatch";
  }
  return "Unknown";
}

double log_add(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double mx = logits.row(t).maxCoeff();
    const double lse =
        mx + std::log((logits.row(t).array() - mx).exp().sum());
    out.row(t) = logits.row(t).array() - lse;
  }
  return out;
}

}  // namespace supcon_asr
