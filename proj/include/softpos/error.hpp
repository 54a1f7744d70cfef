#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace softpos {

// Every failure raised by the library carries a stable kind tag so that the
// CLI can map it onto the single-line JSON error contract.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  virtual ~Error() = default;

  const std::string& kind() const noexcept { return kind_; }

  // Rethrows the same concrete type with `prefix` prepended to the message.
  [[noreturn]] virtual void rethrow_with_context(const std::string& prefix) const {
    throw Error(kind_, prefix + what());
  }

 private:
  std::string kind_;
};

#define SOFTPOS_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
    [[noreturn]] void rethrow_with_context(const std::string& prefix) const override { \
      throw Name(prefix + what());                                  \
    }                                                               \
  };

// dataset
SOFTPOS_DEFINE_ERROR(InvalidArgument)
SOFTPOS_DEFINE_ERROR(ClassTooSmall)
SOFTPOS_DEFINE_ERROR(ManifestMalformed)
SOFTPOS_DEFINE_ERROR(DimensionMismatch)
SOFTPOS_DEFINE_ERROR(MissingFeatureFile)
SOFTPOS_DEFINE_ERROR(ChecksumMismatch)
SOFTPOS_DEFINE_ERROR(MissingPseudoLabel)
// sampling
SOFTPOS_DEFINE_ERROR(BatchTooLarge)
SOFTPOS_DEFINE_ERROR(MoreClassesRequestedThanExist)
SOFTPOS_DEFINE_ERROR(NoClassLargeEnough)
SOFTPOS_DEFINE_ERROR(PairingInfeasible)
// encoder / loss
SOFTPOS_DEFINE_ERROR(ZeroNormEmbedding)
SOFTPOS_DEFINE_ERROR(TemperatureNonPositive)
// trainer
SOFTPOS_DEFINE_ERROR(ConfigHashMismatch)
SOFTPOS_DEFINE_ERROR(ConfigError)
SOFTPOS_DEFINE_ERROR(IoError)

#undef SOFTPOS_DEFINE_ERROR

}  // namespace softpos
