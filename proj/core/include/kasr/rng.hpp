// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace kasr {

using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates seeds that differ in a few bits.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Per-item stream for parallel augmentation: base_seed xor item_index, then mixed.
inline Rng item_rng(std::uint64_t base_seed, std::uint64_t item_index) {
    return Rng(mix_seed(base_seed ^ item_index));
}

}  // namespace kasr
