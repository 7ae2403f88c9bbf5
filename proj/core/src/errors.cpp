// SPDX-License-Identifier: Apache-2.0
#include "mathrec/errors.hpp"

namespace mathrec {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::UnbalancedBraces: return "UnbalancedBraces";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::InvalidTokenId: return "InvalidTokenId";
    case ErrorKind::CompileFailure: return "CompileFailure";
    case ErrorKind::RendererUnavailable: return "RendererUnavailable";
    case ErrorKind::ManifestSchemaError: return "ManifestSchemaError";
    case ErrorKind::MissingImage: return "MissingImage";
    case ErrorKind::InvalidKernel: return "InvalidKernel";
    case ErrorKind::UnknownKind: return "UnknownKind";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::DisabledModule: return "DisabledModule";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::DataExhausted: return "DataExhausted";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::VocabularyMismatch: return "VocabularyMismatch";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::UnreadableImage: return "UnreadableImage";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidKernel:
    case ErrorKind::UnknownKind:
    case ErrorKind::StepOutOfRange:
      return 2;
    case ErrorKind::UnbalancedBraces:
    case ErrorKind::EmptyCorpus:
    case ErrorKind::InvalidTokenId:
    case ErrorKind::ManifestSchemaError:
    case ErrorKind::MissingImage:
    case ErrorKind::DataExhausted:
    case ErrorKind::LengthMismatch:
    case ErrorKind::UnreadableImage:
    case ErrorKind::ShapeError:
      return 3;
    case ErrorKind::CompileFailure:
    case ErrorKind::RendererUnavailable:
      return 4;
    case ErrorKind::CorruptCheckpoint:
    case ErrorKind::VocabularyMismatch:
      return 5;
    case ErrorKind::DisabledModule:
    case ErrorKind::SequenceTooLong:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::NonFiniteLoss:
      return 10;
  }
  return 10;
}

}  // namespace mathrec
