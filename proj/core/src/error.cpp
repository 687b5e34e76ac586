// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/error.hpp"

namespace kasr {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::kInvalidArgument: return "invalid_argument";
        case ErrorKind::kUnreadableFile: return "unreadable_file";
        case ErrorKind::kUnsupportedCodec: return "unsupported_codec";
        case ErrorKind::kShapeMismatch: return "shape_mismatch";
        case ErrorKind::kNumerical: return "numerical";
        case ErrorKind::kMalformed: return "malformed";
        case ErrorKind::kDuplicateId: return "duplicate_id";
        case ErrorKind::kMagicMismatch: return "magic_mismatch";
        case ErrorKind::kVersionMismatch: return "version_mismatch";
        case ErrorKind::kTruncated: return "truncated";
        case ErrorKind::kChecksum: return "checksum";
        case ErrorKind::kVocabMismatch: return "vocab_mismatch";
        case ErrorKind::kConfig: return "config";
        case ErrorKind::kEmptyReference: return "empty_reference";
        case ErrorKind::kRankNotLow: return "rank_not_low";
        case ErrorKind::kUnknownTarget: return "unknown_target";
        case ErrorKind::kDivergence: return "divergence";
    }
    return "unknown";
}

}  // namespace kasr
