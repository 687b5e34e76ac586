// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace kasr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

// Entry point of the kasr binary; primary results go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kasr::cli
