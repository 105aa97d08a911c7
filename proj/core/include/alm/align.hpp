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
#include <utility>
#include <vector>

#include "alm/embedio.hpp"
#include "alm/error.hpp"

namespace alm::align {

class AlignError : public Error {
 public:
  using Error::Error;
};

struct SimilarityMatrix {
  Eigen::MatrixXd values;
  std::string model;
  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
};

// Pairwise cosine similarities. A zero-norm row throws AlignError naming the
// sentence.
SimilarityMatrix cosine_matrix(const embed::EmbeddingSet& set);

// Per item, the k most similar other items (self excluded), most similar
// first, ties broken by the lower index.
using NeighborLists = std::vector<std::vector<int>>;
NeighborLists neighbors(const Eigen::MatrixXd& similarity, std::size_t k);
inline NeighborLists neighbors(const SimilarityMatrix& s, std::size_t k) { return neighbors(s.values, k); }

// Sum over items of |A_i ∩ B_i|. Integer-valued, so comparisons are exact.
std::size_t total_overlap(const NeighborLists& a, const NeighborLists& b);

// Mean over items of |A_i ∩ B_i| / k.
double precision_at_k(const NeighborLists& a, const NeighborLists& b);

// Both sets must carry the same sentence list. Throws AlignError otherwise.
double precision_at_k(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b, std::size_t k);

struct PermutationResult {
  double observed = 0.0;
  double p_value = 1.0;
  std::size_t n_perm = 0;
  std::size_t at_least_observed = 0;  // permutations scoring >= observed
};

// Relabels b's items by a random permutation pi (rows and columns of its
// similarity matrix together) and recomputes P@k against a, n_perm times.
// p = (#{permuted >= observed} + 1) / (n_perm + 1). Permutation p draws from
// split_seed(seed, p), so the result does not depend on `threads`.
PermutationResult permutation_test(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b, std::size_t k,
                                   std::size_t n_perm = 1000, std::uint64_t seed = 0, std::size_t threads = 1);

struct ProcrustesResult {
  Eigen::MatrixXd rotation;  // d x d, orthogonal
  double scale = 0.0;
  double disparity = 0.0;
};

// Orthogonal Procrustes on standardized data. Both N x d inputs are
// column-centred and scaled to unit Frobenius norm; with samples as columns,
// U S V^T = svd(B A^T), rotation = U V^T, scale = trace(S), and
// disparity = ||scale * rotation * A - B||_F^2 = 1 - trace(S)^2.
ProcrustesResult procrustes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
ProcrustesResult procrustes(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b);

// PCA-reduces whichever inputs exceed min(Da, Db, N - 1) to that dimension.
std::pair<embed::EmbeddingSet, embed::EmbeddingSet> harmonize_dims(const embed::EmbeddingSet& a,
                                                                   const embed::EmbeddingSet& b);

// harmonize_dims followed by procrustes.
ProcrustesResult aligned_procrustes(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b);

struct ReportOptions {
  std::vector<std::size_t> ks{1, 5, 10, 15};
  std::size_t heatmap_k = 15;
  std::size_t permutation_k = 15;
  std::size_t n_perm = 1000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string alm_model = "ALM";
};

struct TableCell {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation across ALM replications
  std::size_t n = 0;
};

struct PairValue {
  std::string model_a;
  std::size_t replica_a = 0;
  std::string model_b;
  std::size_t replica_b = 0;
  std::size_t k = 0;
  double value = 0.0;
};

struct PValueEntry {
  std::size_t alm_replica = 0;
  std::string model;
  std::size_t model_replica = 0;
  std::size_t k = 0;
  double observed = 0.0;
  double p_value = 1.0;
};

struct DisparityEntry {
  std::string model;
  std::size_t alm_replica = 0;
  std::size_t dim = 0;
  double disparity = 0.0;
};

struct AlignmentReport {
  std::vector<std::string> models;            // heatmap order, ALM first
  std::vector<std::size_t> replicas;          // sets per model
  std::size_t heatmap_k = 15;
  Eigen::MatrixXd heatmap;                    // mean P@heatmap_k between models
  std::vector<std::size_t> ks;
  std::vector<std::string> table_models;      // every model except ALM
  std::vector<std::vector<TableCell>> table;  // [k][table model]
  std::vector<PValueEntry> pvalues;
  std::vector<DisparityEntry> procrustes;
  std::vector<PairValue> pairs;               // every set pair and k
};

// Full comparison grid over `sets`, grouped by model name. Sets named
// options.alm_model are ALM replications, in input order. Requires every set
// to share the same sentence list and at least one ALM set.
AlignmentReport pairwise_report(const std::vector<embed::EmbeddingSet>& sets, const ReportOptions& options);

std::string report_to_json(const AlignmentReport& report);
AlignmentReport report_from_json(const std::string& text);

// Writes heatmap_p15.csv, table_pk.csv, procrustes.csv and pvalues.csv into
// `dir` (6 significant digits). Returns the written paths.
std::vector<std::filesystem::path> write_report_csvs(const AlignmentReport& report,
                                                     const std::filesystem::path& dir);

}  // namespace alm::align
