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

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "alm/error.hpp"

namespace alm::embed {

inline constexpr std::string_view kFormatTag = "embjson/1";

// N sentence embeddings of dimension D, one row per sentence.
struct EmbeddingSet {
  std::string model_name;
  std::vector<std::string> sentences;
  Eigen::MatrixXd matrix;

  std::size_t count() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

class EmbeddingError : public Error {
 public:
  enum class Kind { Io, Schema, Inconsistent, NonFinite, OrderMismatch };
  EmbeddingError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Checks that `set.sentences` is exactly the canonical 108-sentence list.
// Any permutation, omission, addition or textual deviation throws
// EmbeddingError(OrderMismatch) describing the first difference.
void validate_canonical_order(const EmbeddingSet& set);

// Structural checks shared by the reader and the writer: rows == sentences,
// at least one row and column, all values finite.
void validate_structure(const EmbeddingSet& set);

// {"format":"embjson/1","model":..,"dim":..,"count":..,"sentences":[..],
//  "vectors":[[..],..]} with every number printed to 17 significant digits.
std::string to_embjson(const EmbeddingSet& set);
EmbeddingSet parse_embjson(std::string_view text, bool validate_canonical = true);

void save_embjson(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embjson(const std::filesystem::path& path, bool validate_canonical = true);

// I.i.d. standard normal entries, model name "RANDOM". Uses the canonical
// sentences when n == 108, otherwise placeholder labels.
EmbeddingSet random_embeddings(std::size_t n = 108, std::size_t dim = 128, std::uint64_t seed = 0);

struct PcaFit {
  Eigen::RowVectorXd mean;              // column means
  Eigen::MatrixXd components;           // D x d, orthonormal columns
  Eigen::VectorXd singular_values;      // all singular values, descending
  Eigen::VectorXd explained_variance;   // first d eigenvalues of the sample covariance
};

// Top-d principal directions of the column-centred matrix via SVD. The
// largest-magnitude loading of each component is made positive.
PcaFit pca_fit(const Eigen::MatrixXd& x, std::size_t target_dim);

// Projects onto the top-d components. Requires d <= min(D, N - 1).
EmbeddingSet pca_reduce(const EmbeddingSet& set, std::size_t target_dim);

}  // namespace alm::embed
