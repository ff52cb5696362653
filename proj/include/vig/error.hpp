#pragma once

#include <stdexcept>
#include <string>

namespace vig {

// Base for every error the engine raises. Callers that skip-with-warning
// catch this; anything else is a programming error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define VIG_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                          \
   public:                                                             \
    using Error::Error;                                                \
    const char* kind() const noexcept override { return #Name; }       \
  };

// metadata_core
VIG_DEFINE_ERROR(MismatchedImage)
VIG_DEFINE_ERROR(DimensionConflict)
VIG_DEFINE_ERROR(DegenerateBox)
VIG_DEFINE_ERROR(ManifestError)
VIG_DEFINE_ERROR(MaskError)

// ingestion
VIG_DEFINE_ERROR(DuplicateDataset)

// llm_gateway
VIG_DEFINE_ERROR(LlmUnavailable)
VIG_DEFINE_ERROR(ProtocolError)

// context_builder
VIG_DEFINE_ERROR(EmptyDescription)

// instruction_gen
VIG_DEFINE_ERROR(GenerationFailed)
VIG_DEFINE_ERROR(NoTurnsGenerated)

// prompt_manager
VIG_DEFINE_ERROR(NoCompatibleTemplate)
VIG_DEFINE_ERROR(UnresolvedPlaceholder)
VIG_DEFINE_ERROR(PromptError)

// orchestrator
VIG_DEFINE_ERROR(ConfigError)
VIG_DEFINE_ERROR(EndpointUnreachable)
VIG_DEFINE_ERROR(IoError)

#undef VIG_DEFINE_ERROR

}  // namespace vig
