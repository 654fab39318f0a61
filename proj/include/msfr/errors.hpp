#pragma once

#include <stdexcept>
#include <string>

namespace msfr {

enum class ErrorCategory {
  ShapeMismatch,
  RankConstraintViolated,
  NonFiniteData,
  SingularSystem,
  DegenerateInput,
  ParseError,
  TooFewSubjects,
  AllFitsFailed,
};

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::ShapeMismatch: return "ShapeMismatch";
    case ErrorCategory::RankConstraintViolated: return "RankConstraintViolated";
    case ErrorCategory::NonFiniteData: return "NonFiniteData";
    case ErrorCategory::SingularSystem: return "SingularSystem";
    case ErrorCategory::DegenerateInput: return "DegenerateInput";
    case ErrorCategory::ParseError: return "ParseError";
    case ErrorCategory::TooFewSubjects: return "TooFewSubjects";
    case ErrorCategory::AllFitsFailed: return "AllFitsFailed";
  }
  return "UnknownError";
}

/// Base class for all library errors; carries a machine-readable category.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(std::string(to_string(category)) + ": " + message),
        category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& m) : Error(ErrorCategory::ShapeMismatch, m) {}
};

struct RankConstraintViolated : Error {
  explicit RankConstraintViolated(const std::string& m)
      : Error(ErrorCategory::RankConstraintViolated, m) {}
};

struct NonFiniteData : Error {
  explicit NonFiniteData(const std::string& m) : Error(ErrorCategory::NonFiniteData, m) {}
};

struct SingularSystem : Error {
  explicit SingularSystem(const std::string& m) : Error(ErrorCategory::SingularSystem, m) {}
};

struct DegenerateInput : Error {
  explicit DegenerateInput(const std::string& m) : Error(ErrorCategory::DegenerateInput, m) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error(ErrorCategory::ParseError, m) {}
};

struct TooFewSubjects : Error {
  explicit TooFewSubjects(const std::string& m) : Error(ErrorCategory::TooFewSubjects, m) {}
};

struct AllFitsFailed : Error {
  explicit AllFitsFailed(const std::string& m) : Error(ErrorCategory::AllFitsFailed, m) {}
};

}  // namespace msfr
