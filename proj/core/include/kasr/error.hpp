// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kasr {

enum class ErrorKind {
    kInvalidArgument,
    kUnreadableFile,
    kUnsupportedCodec,
    kShapeMismatch,
    kNumerical,
    kMalformed,
    kDuplicateId,
    kMagicMismatch,
    kVersionMismatch,
    kTruncated,
    kChecksum,
    kVocabMismatch,
    kConfig,
    kEmptyReference,
    kRankNotLow,
    kUnknownTarget,
    kDivergence,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type; callers switch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace kasr
