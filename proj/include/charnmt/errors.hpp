#pragma once

#include <stdexcept>
#include <string>

namespace charnmt {

// Root of every error raised by the library. The CLI maps ConfigError and
// UsageError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CHARNMT_DEFINE_ERROR(Name)  \
  class Name : public Error {       \
   public:                          \
    using Error::Error;             \
  };

CHARNMT_DEFINE_ERROR(DimensionError)
CHARNMT_DEFINE_ERROR(DomainError)
CHARNMT_DEFINE_ERROR(ContractError)
CHARNMT_DEFINE_ERROR(NonFiniteError)
CHARNMT_DEFINE_ERROR(VocabularyError)
CHARNMT_DEFINE_ERROR(ConfigError)
CHARNMT_DEFINE_ERROR(UsageError)
CHARNMT_DEFINE_ERROR(CorpusAlignmentError)
CHARNMT_DEFINE_ERROR(IntegrityError)
CHARNMT_DEFINE_ERROR(PathError)
CHARNMT_DEFINE_ERROR(ConsistencyError)
CHARNMT_DEFINE_ERROR(EnsembleError)
CHARNMT_DEFINE_ERROR(AlignmentError)

#undef CHARNMT_DEFINE_ERROR

}  // namespace charnmt
