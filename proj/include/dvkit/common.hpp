#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dvkit {

// Error codes mirror the failure modes of the public operations. Tests match
// on the code, messages are for humans.
enum class Errc {
  not_found,
  unsupported_format,
  truncated_file,
  odd_rate,
  parse_error,
  duplicate_utt_id,
  empty_manifest,
  invalid_spec,
  too_short,
  rate_mismatch,
  empty_utterance,
  shape_mismatch,
  label_out_of_range,
  non_finite_gradient,
  invalid_config,
  io_error,
  version_mismatch,
  corrupt_tensor,
  zero_vector,
  dim_mismatch,
  degenerate_scatter,
  too_few_samples,
  bad_dim,
  singular_covariance,
  insufficient_data,
  one_class_only,
  missing_embedding,
  unknown_key,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::not_found: return "NotFound";
    case Errc::unsupported_format: return "UnsupportedFormat";
    case Errc::truncated_file: return "TruncatedFile";
    case Errc::odd_rate: return "OddRate";
    case Errc::parse_error: return "ParseError";
    case Errc::duplicate_utt_id: return "DuplicateUttId";
    case Errc::empty_manifest: return "EmptyManifest";
    case Errc::invalid_spec: return "InvalidSpec";
    case Errc::too_short: return "TooShort";
    case Errc::rate_mismatch: return "RateMismatch";
    case Errc::empty_utterance: return "EmptyUtterance";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::label_out_of_range: return "LabelOutOfRange";
    case Errc::non_finite_gradient: return "NonFiniteGradient";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::io_error: return "IoError";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::corrupt_tensor: return "CorruptTensor";
    case Errc::zero_vector: return "ZeroVector";
    case Errc::dim_mismatch: return "DimMismatch";
    case Errc::degenerate_scatter: return "DegenerateScatter";
    case Errc::too_few_samples: return "TooFewSamples";
    case Errc::bad_dim: return "BadDim";
    case Errc::singular_covariance: return "SingularCovariance";
    case Errc::insufficient_data: return "InsufficientData";
    case Errc::one_class_only: return "OneClassOnly";
    case Errc::missing_embedding: return "MissingEmbedding";
    case Errc::unknown_key: return "UnknownKey";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg),
        code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) {
  throw Error(code, msg);
}

inline void require(bool ok, Errc code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

}  // namespace dvkit
