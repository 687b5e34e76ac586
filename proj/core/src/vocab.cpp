// Copyright 2026 The kasr Authors
// SPDX-License-Identifier: Apache-2.0

#include "kasr/vocab.hpp"

#include <algorithm>
#include <set>

#include "kasr/error.hpp"
#include "kasr/text.hpp"

namespace kasr {

Vocabulary::Vocabulary(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        if (i > 0 && symbols_[i] <= symbols_[i - 1]) {
            throw Error(ErrorKind::kInvalidArgument, "vocabulary symbols must be strictly ascending");
        }
        index_.emplace(symbols_[i], kNumSpecial + static_cast<int>(i));
    }
}

Vocabulary Vocabulary::from_texts(std::span<const std::string> texts) {
    std::set<char32_t> seen;
    for (const auto& t : texts) {
        for (char32_t c : utf8_to_u32(t)) seen.insert(c);
    }
    if (seen.empty()) throw Error(ErrorKind::kInvalidArgument, "cannot build a vocabulary from an empty corpus");
    return Vocabulary(std::vector<char32_t>(seen.begin(), seen.end()));
}

int Vocabulary::id(char32_t cp) const {
    const auto it = index_.find(cp);
    return it == index_.end() ? kUnk : it->second;
}

char32_t Vocabulary::symbol(int id) const {
    if (id == kUnk) return U'�';
    if (id < kNumSpecial || id >= size()) {
        throw Error(ErrorKind::kInvalidArgument, "token id " + std::to_string(id) + " has no symbol");
    }
    return symbols_[static_cast<std::size_t>(id - kNumSpecial)];
}

std::vector<int> Vocabulary::encode(std::string_view utf8) const {
    std::vector<int> ids;
    for (char32_t c : utf8_to_u32(utf8)) ids.push_back(id(c));
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::u32string out;
    for (int t : ids) {
        if (t == kPad || t == kSot || t == kEot) continue;
        out.push_back(t >= size() || t < 0 ? U'\uFFFD' : symbol(t));
    }
    return u32_to_utf8(out);
}

}  // namespace kasr
