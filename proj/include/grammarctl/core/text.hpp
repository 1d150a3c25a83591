// Copyright 2026 The grammarctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace grammarctl::text {

struct Token {
  std::string text;
  std::size_t begin = 0;  // byte offset into the source
  std::size_t end = 0;

  bool operator==(const Token&) const = default;
};

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Letters, digits and any non-ASCII byte count as word characters, so UTF-8
// words stay in one piece.
inline bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

inline bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    char x = a[i], y = b[i];
    if (x >= 'A' && x <= 'Z') x = static_cast<char>(x + 32);
    if (y >= 'A' && y <= 'Z') y = static_cast<char>(y + 32);
    if (x != y) return false;
  }
  return true;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

// Word-level tokenizer shared by the encoder and the local language model.
//   - runs of word bytes form one token
//   - an apostrophe followed by letters forms a clitic token ("'s", "'t")
//   - any other non-space byte is a single punctuation token
inline std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (is_word_byte(c)) {
      while (j < s.size() && is_word_byte(s[j])) ++j;
    } else if (c == '\'' && j < s.size() && is_alpha(s[j])) {
      while (j < s.size() && is_alpha(s[j])) ++j;
    }
    tokens.push_back({std::string(s.substr(i, j - i)), i, j});
    i = j;
  }
  return tokens;
}

inline std::vector<std::string> token_strings(std::string_view s) {
  std::vector<std::string> out;
  for (auto& t : tokenize(s)) out.push_back(std::move(t.text));
  return out;
}

inline bool attaches_left(std::string_view token) {
  if (token.empty()) return false;
  if (token.front() == '\'') return true;
  return token.size() == 1 && std::string_view(".,!?;:)%").find(token.front()) != std::string_view::npos;
}

// The text piece that appending `token` after `previous` adds to a detokenized
// string. Concatenating pieces reproduces detokenize() exactly.
inline std::string join_piece(std::string_view previous, std::string_view token) {
  if (previous.empty() || attaches_left(token) || previous == "(" || previous == "$") return std::string(token);
  return " " + std::string(token);
}

inline std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  std::string_view previous;
  for (const auto& tok : tokens) {
    out += join_piece(previous, tok);
    previous = tok;
  }
  return out;
}

// Splits after runs of . ! ? that are followed by whitespace.
inline std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '.' && s[i] != '!' && s[i] != '?') continue;
    std::size_t j = i;
    while (j + 1 < s.size() && (s[j + 1] == '.' || s[j + 1] == '!' || s[j + 1] == '?')) ++j;
    if (j + 1 < s.size() && !is_space(s[j + 1])) {
      i = j;
      continue;
    }
    auto piece = trim(s.substr(start, j + 1 - start));
    if (!piece.empty()) out.emplace_back(piece);
    start = j + 1;
    i = j;
  }
  auto rest = trim(s.substr(std::min(start, s.size())));
  if (!rest.empty()) out.emplace_back(rest);
  return out;
}

// Whitespace-separated word count; used for speed and corpus statistics.
inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

// Lowercased whitespace words with ASCII punctuation removed; empty words dropped.
inline std::vector<std::string> normalized_words(std::string_view s) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char c : s) {
    if (is_space(c)) {
      flush();
    } else if (is_word_byte(c)) {
      current.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c);
    }
  }
  flush();
  return words;
}

// 64-bit FNV-1a. Stable across platforms; used for hashing features and
// fingerprinting weights.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace grammarctl::text
