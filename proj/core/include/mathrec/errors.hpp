// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mathrec {

enum class ErrorKind {
  UnbalancedBraces,
  EmptyCorpus,
  InvalidTokenId,
  CompileFailure,
  RendererUnavailable,
  ManifestSchemaError,
  MissingImage,
  InvalidKernel,
  UnknownKind,
  ShapeError,
  DisabledModule,
  SequenceTooLong,
  ShapeMismatch,
  NonFiniteLoss,
  StepOutOfRange,
  DataExhausted,
  CorruptCheckpoint,
  LengthMismatch,
  VocabularyMismatch,
  ConfigError,
  UnreadableImage,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Process exit code the CLI reports for an error of this kind.
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mathrec
