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

#include "alm/embedio.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "alm/lang.hpp"
#include "alm/rng.hpp"
#include "detail/binio.hpp"

namespace alm::embed {

namespace {

using Kind = EmbeddingError::Kind;

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

// JSON has no non-finite numbers, but common writers emit NaN / Infinity /
// -Infinity literals. Rewrites those tokens (outside strings) to null so the
// document parses and the offending row can be reported precisely.
std::string neutralize_non_finite(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_string = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      out += c;
      if (c == '\\' && i + 1 < text.size()) {
        out += text[++i];
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
      out += c;
      continue;
    }
    const auto starts = [&](std::string_view tok) { return text.substr(i, tok.size()) == tok; };
    if (starts("-Infinity")) {
      out += "null";
      i += 8;
    } else if (starts("Infinity")) {
      out += "null";
      i += 7;
    } else if (starts("NaN")) {
      out += "null";
      i += 2;
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

void validate_structure(const EmbeddingSet& set) {
  if (set.matrix.rows() == 0 || set.matrix.cols() == 0) {
    throw EmbeddingError(Kind::Inconsistent, "embedding set '" + set.model_name + "' is empty");
  }
  if (set.sentences.size() != set.count()) {
    throw EmbeddingError(Kind::Inconsistent, "embedding set '" + set.model_name + "' has " +
                                                 std::to_string(set.sentences.size()) + " sentences but " +
                                                 std::to_string(set.count()) + " rows");
  }
  for (Eigen::Index r = 0; r < set.matrix.rows(); ++r) {
    if (!set.matrix.row(r).allFinite()) {
      throw EmbeddingError(Kind::NonFinite, "embedding set '" + set.model_name + "': non-finite value in row " +
                                                std::to_string(r) + " ('" + set.sentences[r] + "')");
    }
  }
}

void validate_canonical_order(const EmbeddingSet& set) {
  const auto& canon = lang::instructions();
  if (set.sentences.size() != canon.size()) {
    throw EmbeddingError(Kind::OrderMismatch, "embedding set '" + set.model_name + "' has " +
                                                  std::to_string(set.sentences.size()) +
                                                  " sentences; the canonical list has 108");
  }
  for (std::size_t i = 0; i < canon.size(); ++i) {
    if (set.sentences[i] != canon[i].text) {
      throw EmbeddingError(Kind::OrderMismatch, "embedding set '" + set.model_name + "': sentence " +
                                                    std::to_string(i) + " is '" + set.sentences[i] +
                                                    "', expected '" + canon[i].text + "'");
    }
  }
}

std::string to_embjson(const EmbeddingSet& set) {
  validate_structure(set);
  std::string out = "{\"format\":\"embjson/1\",\"model\":" + quoted(set.model_name) +
                    ",\"dim\":" + std::to_string(set.dim()) + ",\"count\":" + std::to_string(set.count()) +
                    ",\"sentences\":[";
  for (std::size_t i = 0; i < set.sentences.size(); ++i) {
    if (i) out += ',';
    out += quoted(set.sentences[i]);
  }
  out += "],\"vectors\":[";
  for (Eigen::Index r = 0; r < set.matrix.rows(); ++r) {
    out += r ? ",\n[" : "\n[";
    for (Eigen::Index c = 0; c < set.matrix.cols(); ++c) {
      if (c) out += ',';
      append_number(out, set.matrix(r, c));
    }
    out += ']';
  }
  out += "]}\n";
  return out;
}

EmbeddingSet parse_embjson(std::string_view text, bool validate_canonical) {
  const auto doc = nlohmann::json::parse(neutralize_non_finite(text), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw EmbeddingError(Kind::Schema, "embjson: not a JSON object");
  const auto require = [&](const char* key, auto check, const char* what) -> const nlohmann::json& {
    if (!doc.contains(key) || !check(doc.at(key))) {
      throw EmbeddingError(Kind::Schema, std::string("embjson: field '") + key + "' missing or not " + what);
    }
    return doc.at(key);
  };
  const auto& format = require("format", [](const auto& j) { return j.is_string(); }, "a string");
  if (format.template get<std::string>() != kFormatTag) {
    throw EmbeddingError(Kind::Schema, "embjson: unsupported format '" + format.template get<std::string>() + "'");
  }
  EmbeddingSet set;
  set.model_name = require("model", [](const auto& j) { return j.is_string(); }, "a string").template get<std::string>();
  const auto dim = require("dim", [](const auto& j) { return j.is_number_unsigned(); }, "a non-negative integer").template get<std::size_t>();
  const auto count = require("count", [](const auto& j) { return j.is_number_unsigned(); }, "a non-negative integer").template get<std::size_t>();
  const auto& sentences = require("sentences", [](const auto& j) { return j.is_array(); }, "an array");
  const auto& vectors = require("vectors", [](const auto& j) { return j.is_array(); }, "an array");

  for (const auto& s : sentences) {
    if (!s.is_string()) throw EmbeddingError(Kind::Schema, "embjson: sentences must be strings");
    set.sentences.push_back(s.get<std::string>());
  }
  if (vectors.size() != count) {
    throw EmbeddingError(Kind::Inconsistent, "embjson: count is " + std::to_string(count) + " but " +
                                                 std::to_string(vectors.size()) + " vectors are present");
  }
  if (set.sentences.size() != count) {
    throw EmbeddingError(Kind::Inconsistent, "embjson: count is " + std::to_string(count) + " but " +
                                                 std::to_string(set.sentences.size()) + " sentences are present");
  }
  if (count == 0 || dim == 0) throw EmbeddingError(Kind::Inconsistent, "embjson: empty embedding set");
  set.matrix.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < count; ++r) {
    const auto& row = vectors[r];
    if (!row.is_array()) throw EmbeddingError(Kind::Schema, "embjson: vector " + std::to_string(r) + " is not an array");
    if (row.size() != dim) {
      throw EmbeddingError(Kind::Inconsistent, "embjson: vector " + std::to_string(r) + " has " +
                                                   std::to_string(row.size()) + " values, dim is " + std::to_string(dim));
    }
    for (std::size_t c = 0; c < dim; ++c) {
      const auto& v = row[c];
      if (v.is_null()) {
        throw EmbeddingError(Kind::NonFinite, "embjson: non-finite value in row " + std::to_string(r) + " ('" +
                                                  set.sentences[r] + "')");
      }
      if (!v.is_number()) {
        throw EmbeddingError(Kind::Schema, "embjson: vector " + std::to_string(r) + " holds a non-number");
      }
      set.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v.get<double>();
    }
  }
  validate_structure(set);
  if (validate_canonical) validate_canonical_order(set);
  return set;
}

void save_embjson(const EmbeddingSet& set, const std::filesystem::path& path) {
  const std::string text = to_embjson(set);
  detail::write_atomically(path, [&](std::ostream& out) { out << text; });
}

EmbeddingSet load_embjson(const std::filesystem::path& path, bool validate_canonical) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbeddingError(Kind::Io, "cannot open embedding file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_embjson(buf.str(), validate_canonical);
  } catch (const EmbeddingError& e) {
    throw EmbeddingError(e.kind(), path.string() + ": " + e.what());
  }
}

EmbeddingSet random_embeddings(std::size_t n, std::size_t dim, std::uint64_t seed) {
  if (n == 0 || dim == 0) throw ContractViolation("random_embeddings: n and dim must be >= 1");
  EmbeddingSet set;
  set.model_name = "RANDOM";
  if (n == static_cast<std::size_t>(lang::kInstructionCount)) {
    set.sentences = lang::canonical_sentences();
  } else {
    for (std::size_t i = 0; i < n; ++i) set.sentences.push_back("item " + std::to_string(i));
  }
  set.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  Rng rng(seed);
  for (Eigen::Index r = 0; r < set.matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < set.matrix.cols(); ++c) set.matrix(r, c) = rng.normal();
  }
  return set;
}

PcaFit pca_fit(const Eigen::MatrixXd& x, std::size_t target_dim) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  const std::size_t bound = std::min(d, n > 0 ? n - 1 : 0);
  if (target_dim == 0 || target_dim > bound) {
    throw ContractViolation("pca_reduce: target_dim " + std::to_string(target_dim) +
                            " exceeds min(D, N-1) = " + std::to_string(bound));
  }
  PcaFit fit;
  fit.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - fit.mean;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  fit.singular_values = svd.singularValues();
  fit.components = svd.matrixV().leftCols(static_cast<Eigen::Index>(target_dim));
  for (Eigen::Index c = 0; c < fit.components.cols(); ++c) {
    Eigen::Index at = 0;
    fit.components.col(c).cwiseAbs().maxCoeff(&at);
    if (fit.components(at, c) < 0) fit.components.col(c) *= -1.0;
  }
  fit.explained_variance =
      fit.singular_values.head(static_cast<Eigen::Index>(target_dim)).array().square() / static_cast<double>(n - 1);
  return fit;
}

EmbeddingSet pca_reduce(const EmbeddingSet& set, std::size_t target_dim) {
  const PcaFit fit = pca_fit(set.matrix, target_dim);
  EmbeddingSet out;
  out.model_name = set.model_name;
  out.sentences = set.sentences;
  out.matrix = (set.matrix.rowwise() - fit.mean) * fit.components;
  return out;
}

}  // namespace alm::embed
