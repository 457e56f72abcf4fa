#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace misent {

// Every failure the library reports. Kinds map onto the CLI exit-code
// contract: data/validation problems exit 2, numerical failures exit 3.
enum class ErrorKind {
  io,
  encoding,
  parse,
  empty_sentence,
  batch_too_small,
  dimension_mismatch,
  schema,
  missing_sequence,
  shape_mismatch,
  empty_mask,
  stale_cache,
  bad_magic,
  unsupported_version,
  corrupt_payload,
  zero_vector,
  constant_input,
  too_few_pairs,
  class_too_small,
  invalid_config,
  non_finite_gradient,
  diverged,
  grad_check_failed,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  bool numerical() const noexcept {
    return kind_ == ErrorKind::non_finite_gradient ||
           kind_ == ErrorKind::diverged ||
           kind_ == ErrorKind::grad_check_failed;
  }

 private:
  ErrorKind kind_;
};

#define MISENT_DEFINE_ERROR(NAME, KIND)                        \
  struct NAME : Error {                                        \
    explicit NAME(std::string m) : Error(KIND, std::move(m)) {} \
  }

MISENT_DEFINE_ERROR(IoError, ErrorKind::io);
MISENT_DEFINE_ERROR(EncodingError, ErrorKind::encoding);
MISENT_DEFINE_ERROR(ParseError, ErrorKind::parse);
MISENT_DEFINE_ERROR(EmptySentence, ErrorKind::empty_sentence);
MISENT_DEFINE_ERROR(BatchTooSmall, ErrorKind::batch_too_small);
MISENT_DEFINE_ERROR(DimensionMismatch, ErrorKind::dimension_mismatch);
MISENT_DEFINE_ERROR(SchemaError, ErrorKind::schema);
MISENT_DEFINE_ERROR(MissingSequence, ErrorKind::missing_sequence);
MISENT_DEFINE_ERROR(ShapeMismatch, ErrorKind::shape_mismatch);
MISENT_DEFINE_ERROR(EmptyMask, ErrorKind::empty_mask);
MISENT_DEFINE_ERROR(StaleCache, ErrorKind::stale_cache);
MISENT_DEFINE_ERROR(BadMagic, ErrorKind::bad_magic);
MISENT_DEFINE_ERROR(UnsupportedVersion, ErrorKind::unsupported_version);
MISENT_DEFINE_ERROR(CorruptPayload, ErrorKind::corrupt_payload);
MISENT_DEFINE_ERROR(ZeroVector, ErrorKind::zero_vector);
MISENT_DEFINE_ERROR(ConstantInput, ErrorKind::constant_input);
MISENT_DEFINE_ERROR(TooFewPairs, ErrorKind::too_few_pairs);
MISENT_DEFINE_ERROR(ClassTooSmall, ErrorKind::class_too_small);
MISENT_DEFINE_ERROR(InvalidConfig, ErrorKind::invalid_config);
MISENT_DEFINE_ERROR(NonFiniteGradient, ErrorKind::non_finite_gradient);
MISENT_DEFINE_ERROR(Diverged, ErrorKind::diverged);
MISENT_DEFINE_ERROR(GradCheckFailed, ErrorKind::grad_check_failed);

#undef MISENT_DEFINE_ERROR

}  // namespace misent
