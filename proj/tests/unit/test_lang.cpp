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

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "alm/lang.hpp"

namespace alm::lang {
namespace {

std::vector<std::string> fixture_sentences() {
  std::ifstream in(ALM_TEST_FIXTURES "/canonical_sentences.txt");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

TEST(Instructions, ExactlyOneHundredEight) {
  EXPECT_EQ(instructions().size(), 108u);
  EXPECT_EQ(static_cast<std::size_t>(kVerbCount * env::kColorCount * env::kObjectKindCount), instructions().size());
}

TEST(Instructions, FirstAndLast) {
  EXPECT_EQ(instructions().front().text, "go to the red ball");
  EXPECT_EQ(instructions().back().text, "avoid the grey key");
  EXPECT_EQ(instructions()[100].text, "avoid the yellow box");
}

TEST(Instructions, MatchGoldenFixture) {
  const auto golden = fixture_sentences();
  ASSERT_EQ(golden.size(), 108u);
  EXPECT_EQ(canonical_sentences(), golden);
}

TEST(Instructions, SortedByIndexAndConsistent) {
  const auto& all = instructions();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& ins = all[i];
    EXPECT_EQ(ins.canonical_index, static_cast<int>(i));
    EXPECT_EQ(ins.canonical_index, canonical_index(ins.verb, ins.color, ins.kind));
    EXPECT_EQ(ins.text, std::string(verb_text(ins.verb)) + " the " + std::string(env::to_string(ins.color)) + " " +
                            std::string(env::to_string(ins.kind)));
  }
}

TEST(CanonicalIndex, CornersAndBijection) {
  EXPECT_EQ(canonical_index(VerbPhrase::GoTo, env::Color::Red, env::ObjectKind::Ball), 0);
  EXPECT_EQ(canonical_index(VerbPhrase::Avoid, env::Color::Grey, env::ObjectKind::Key), 107);
  std::set<int> seen;
  for (int v = 0; v < kVerbCount; ++v)
    for (int c = 0; c < env::kColorCount; ++c)
      for (int k = 0; k < env::kObjectKindCount; ++k)
        seen.insert(canonical_index(static_cast<VerbPhrase>(v), static_cast<env::Color>(c),
                                    static_cast<env::ObjectKind>(k)));
  EXPECT_EQ(seen.size(), 108u);
  EXPECT_EQ(*seen.begin(), 0);
  EXPECT_EQ(*seen.rbegin(), 107);
}

TEST(Verbs, TaskMapping) {
  EXPECT_EQ(task_of(VerbPhrase::GoTo), env::Task::GoTo);
  EXPECT_EQ(task_of(VerbPhrase::MoveTowards), env::Task::GoTo);
  EXPECT_EQ(task_of(VerbPhrase::PickUp), env::Task::PickUp);
  EXPECT_EQ(task_of(VerbPhrase::EscapeFrom), env::Task::EscapeFrom);
  EXPECT_EQ(task_of(VerbPhrase::StayAwayFrom), env::Task::EscapeFrom);
  EXPECT_EQ(task_of(VerbPhrase::Avoid), env::Task::EscapeFrom);
  EXPECT_EQ(verb_text(VerbPhrase::StayAwayFrom), "stay away from");
}

TEST(Vocabulary, OrderAndIds) {
  const std::vector<std::string_view> expected{"go",   "to",    "move", "towards", "pick",   "up",     "escape",
                                               "from", "stay",  "away", "avoid",   "the",    "box",    "key",
                                               "ball", "red",   "green", "blue",   "yellow", "purple", "grey"};
  const auto& vocab = vocabulary();
  ASSERT_EQ(vocab.size(), expected.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    EXPECT_EQ(vocab[i], expected[i]);
    EXPECT_EQ(word_id(expected[i]), i);
  }
}

TEST(Tokenize, KnownSequences) {
  EXPECT_EQ(tokenize("go to the red ball"), (TokenSeq{0, 1, 11, 15, 14}));
  const auto avoid = tokenize("avoid the grey key");
  EXPECT_EQ(avoid, (TokenSeq{10, 11, 20, 13}));
  EXPECT_EQ(tokenize("stay away from the blue box").size(), 6u);
}

TEST(Tokenize, RoundTripAllInstructions) {
  for (const auto& ins : instructions()) {
    const auto ids = tokenize(ins.text);
    EXPECT_GE(ids.size(), 4u);
    EXPECT_LE(ids.size(), static_cast<std::size_t>(kMaxTokens));
    for (auto id : ids) EXPECT_LT(id, kVocabularySize);
    EXPECT_EQ(detokenize(ids), ins.text);
  }
}

TEST(Tokenize, UnknownWordIsNamed) {
  try {
    tokenize("go to the orange ball");
    FAIL() << "expected TokenizeError";
  } catch (const TokenizeError& e) {
    EXPECT_EQ(e.word(), "orange");
    EXPECT_NE(std::string(e.what()).find("orange"), std::string::npos);
  }
}

}  // namespace
}  // namespace alm::lang
