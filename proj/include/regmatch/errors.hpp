#pragma once

#include <stdexcept>
#include <string>

namespace regmatch {

enum class ErrorCategory {
  kConfig,
  kData,
  kFormat,
  kDomain,
  kShape,
  kAdapter,
  kTraining,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define REGMATCH_DEFINE_ERROR(Name, Category)                   \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what) : Error(Category, what) {} \
  };

REGMATCH_DEFINE_ERROR(ConfigError, ErrorCategory::kConfig)
REGMATCH_DEFINE_ERROR(DataError, ErrorCategory::kData)
REGMATCH_DEFINE_ERROR(FormatError, ErrorCategory::kFormat)
REGMATCH_DEFINE_ERROR(DomainError, ErrorCategory::kDomain)
REGMATCH_DEFINE_ERROR(ShapeError, ErrorCategory::kShape)
REGMATCH_DEFINE_ERROR(AdapterError, ErrorCategory::kAdapter)
REGMATCH_DEFINE_ERROR(TrainingError, ErrorCategory::kTraining)

#undef REGMATCH_DEFINE_ERROR

const char* category_name(ErrorCategory category) noexcept;

}  // namespace regmatch
