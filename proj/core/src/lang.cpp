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

#include "alm/lang.hpp"

#include <sstream>

namespace alm::lang {

namespace {

constexpr std::array<std::string_view, kVocabularySize> kWords{
    "go",   "to",  "move", "towards", "pick", "up",  "escape",
    "from", "stay", "away", "avoid",  "the",  "box", "key",
    "ball", "red", "green", "blue",   "yellow", "purple", "grey"};

}  // namespace

TokenizeError::TokenizeError(std::string word)
    : Error("unknown word '" + word + "'"), word_(std::move(word)) {}

std::string_view verb_text(VerbPhrase verb) {
  switch (verb) {
    case VerbPhrase::GoTo: return "go to";
    case VerbPhrase::MoveTowards: return "move towards";
    case VerbPhrase::PickUp: return "pick up";
    case VerbPhrase::EscapeFrom: return "escape from";
    case VerbPhrase::StayAwayFrom: return "stay away from";
    case VerbPhrase::Avoid: return "avoid";
  }
  return "";
}

env::Task task_of(VerbPhrase verb) {
  switch (verb) {
    case VerbPhrase::GoTo:
    case VerbPhrase::MoveTowards:
      return env::Task::GoTo;
    case VerbPhrase::PickUp:
      return env::Task::PickUp;
    case VerbPhrase::EscapeFrom:
    case VerbPhrase::StayAwayFrom:
    case VerbPhrase::Avoid:
      return env::Task::EscapeFrom;
  }
  return env::Task::GoTo;
}

const std::array<std::string_view, kVocabularySize>& vocabulary() { return kWords; }

TokenId word_id(std::string_view word) {
  for (std::size_t i = 0; i < kWords.size(); ++i) {
    if (kWords[i] == word) return static_cast<TokenId>(i);
  }
  throw TokenizeError(std::string(word));
}

Instruction make_instruction(VerbPhrase verb, env::Color color, env::ObjectKind kind) {
  Instruction ins;
  ins.verb = verb;
  ins.color = color;
  ins.kind = kind;
  ins.text = std::string(verb_text(verb)) + " the " + std::string(env::to_string(color)) + " " +
             std::string(env::to_string(kind));
  ins.canonical_index = canonical_index(verb, color, kind);
  return ins;
}

const std::vector<Instruction>& instructions() {
  static const std::vector<Instruction> all = [] {
    std::vector<Instruction> v;
    v.reserve(kInstructionCount);
    for (int verb = 0; verb < kVerbCount; ++verb) {
      for (int color = 0; color < env::kColorCount; ++color) {
        for (int kind = 0; kind < env::kObjectKindCount; ++kind) {
          v.push_back(make_instruction(static_cast<VerbPhrase>(verb),
                                       static_cast<env::Color>(color),
                                       static_cast<env::ObjectKind>(kind)));
        }
      }
    }
    return v;
  }();
  return all;
}

std::vector<std::string> canonical_sentences() {
  std::vector<std::string> out;
  out.reserve(kInstructionCount);
  for (const auto& ins : instructions()) out.push_back(ins.text);
  return out;
}

TokenSeq tokenize(std::string_view text) {
  TokenSeq ids;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) ids.push_back(word_id(word));
  return ids;
}

std::string detokenize(const TokenSeq& ids) {
  std::string out;
  for (const TokenId id : ids) {
    if (id >= kVocabularySize) throw ContractViolation("detokenize: token id out of range");
    if (!out.empty()) out += ' ';
    out += kWords[id];
  }
  return out;
}

}  // namespace alm::lang
