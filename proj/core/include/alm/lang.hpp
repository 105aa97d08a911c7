// Copyright 2026 The ALM Align Authors
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

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "alm/env.hpp"
#include "alm/error.hpp"

namespace alm::lang {

enum class VerbPhrase : std::uint8_t {
  GoTo = 0,
  MoveTowards = 1,
  PickUp = 2,
  EscapeFrom = 3,
  StayAwayFrom = 4,
  Avoid = 5,
};

inline constexpr int kVerbCount = 6;
inline constexpr int kInstructionCount = kVerbCount * env::kColorCount * env::kObjectKindCount;
inline constexpr int kVocabularySize = 21;
inline constexpr int kMaxTokens = 6;

std::string_view verb_text(VerbPhrase verb);
env::Task task_of(VerbPhrase verb);

using TokenId = std::uint8_t;
using TokenSeq = std::vector<TokenId>;

class TokenizeError : public Error {
 public:
  explicit TokenizeError(std::string word);
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

// Word list in id order: go, to, move, towards, pick, up, escape, from, stay,
// away, avoid, the, box, key, ball, red, green, blue, yellow, purple, grey.
const std::array<std::string_view, kVocabularySize>& vocabulary();
TokenId word_id(std::string_view word);  // throws TokenizeError

struct Instruction {
  VerbPhrase verb = VerbPhrase::GoTo;
  env::Color color = env::Color::Red;
  env::ObjectKind kind = env::ObjectKind::Ball;
  std::string text;
  int canonical_index = 0;

  env::Task task() const { return task_of(verb); }
  env::Object target() const { return {kind, color}; }
};

// 18 * verb + 3 * color + kind.
constexpr int canonical_index(VerbPhrase verb, env::Color color, env::ObjectKind kind) {
  return 18 * static_cast<int>(verb) + 3 * static_cast<int>(color) + static_cast<int>(kind);
}

Instruction make_instruction(VerbPhrase verb, env::Color color, env::ObjectKind kind);

// All 108 instructions sorted by canonical index. Built once, shared.
const std::vector<Instruction>& instructions();
std::vector<std::string> canonical_sentences();

TokenSeq tokenize(std::string_view text);
std::string detokenize(const TokenSeq& ids);

}  // namespace alm::lang
