#pragma once

#include <stdexcept>
#include <string>

namespace llm4ng {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define LLM4NG_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                            \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

LLM4NG_DEFINE_ERROR(MalformedRecord);
LLM4NG_DEFINE_ERROR(DanglingEdge);
LLM4NG_DEFINE_ERROR(InsufficientNodes);
LLM4NG_DEFINE_ERROR(IndexOutOfRange);
LLM4NG_DEFINE_ERROR(InvalidParameter);
LLM4NG_DEFINE_ERROR(MissingSlot);
LLM4NG_DEFINE_ERROR(BackendUnavailable);
LLM4NG_DEFINE_ERROR(MalformedCompletion);
LLM4NG_DEFINE_ERROR(DimensionMismatch);
LLM4NG_DEFINE_ERROR(GraphTooDense);
LLM4NG_DEFINE_ERROR(NonFiniteLoss);
LLM4NG_DEFINE_ERROR(EmptyMask);
LLM4NG_DEFINE_ERROR(NoLabeledNodes);
LLM4NG_DEFINE_ERROR(IoFailure);

#undef LLM4NG_DEFINE_ERROR

// Rethrows module errors with the pipeline stage prepended, so a failed
// run names where it died.
struct StageError : Error {
  StageError(const std::string& stage, const std::string& what)
      : Error("[stage " + stage + "] " + what), stage(stage) {}
  std::string stage;
};

}  // namespace llm4ng
