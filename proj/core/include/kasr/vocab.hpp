// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0
//
// Character-level vocabulary: four fixed specials followed by code points in
// ascending order.

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kasr {

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kSot = 1;
    static constexpr int kEot = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumSpecial = 4;

    Vocabulary() = default;
    // Throws kInvalidArgument unless symbols are strictly ascending.
    explicit Vocabulary(std::vector<char32_t> symbols);

    // Sorted union of the code points of `texts`.
    static Vocabulary from_texts(std::span<const std::string> texts);

    int size() const { return kNumSpecial + static_cast<int>(symbols_.size()); }
    const std::vector<char32_t>& symbols() const { return symbols_; }
    // kUnk for code points outside the vocabulary.
    int id(char32_t cp) const;
    // U+FFFD for kUnk; throws for other specials or out-of-range ids.
    char32_t symbol(int id) const;

    std::vector<int> encode(std::string_view utf8) const;
    // Skips pad/sot/eot; unk and ids past the end render as U+FFFD.
    std::string decode(std::span<const int> ids) const;

    bool operator==(const Vocabulary& other) const { return symbols_ == other.symbols_; }

private:
    std::vector<char32_t> symbols_;
    std::unordered_map<char32_t, int> index_;
};

}  // namespace kasr
