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

#include "alm/align.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "alm/parallel.hpp"
#include "alm/rng.hpp"
#include "detail/binio.hpp"

namespace alm::align {

namespace {

void require_same_sentences(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b) {
  if (a.count() != b.count()) {
    throw AlignError("'" + a.model_name + "' has " + std::to_string(a.count()) + " items but '" + b.model_name +
                     "' has " + std::to_string(b.count()));
  }
  if (a.sentences != b.sentences) {
    const auto mismatch = std::mismatch(a.sentences.begin(), a.sentences.end(), b.sentences.begin());
    const auto at = static_cast<std::size_t>(mismatch.first - a.sentences.begin());
    throw AlignError("sentence order differs between '" + a.model_name + "' and '" + b.model_name + "' at index " +
                     std::to_string(at));
  }
}

void require_k(std::size_t k, std::size_t n) {
  if (k < 1 || k + 1 > n) {
    throw AlignError("k = " + std::to_string(k) + " out of range [1, " + std::to_string(n > 0 ? n - 1 : 0) + "]");
  }
}

// Top-k of row `row` of `s` with the documented ordering; writes into out.
template <typename Sim>
void top_k(std::size_t n, std::size_t row, std::size_t k, Sim&& sim, std::vector<int>& scratch,
           std::vector<int>& out) {
  scratch.clear();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != row) scratch.push_back(static_cast<int>(j));
  }
  const auto better = [&](int a, int b) {
    const double sa = sim(a);
    const double sb = sim(b);
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end(), better);
  out.assign(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k));
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

SimilarityMatrix cosine_matrix(const embed::EmbeddingSet& set) {
  const Eigen::VectorXd norms = set.matrix.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) {
      throw AlignError("cosine_matrix: zero-norm embedding for sentence '" +
                       (static_cast<std::size_t>(i) < set.sentences.size() ? set.sentences[i] : std::to_string(i)) +
                       "' in '" + set.model_name + "'");
    }
  }
  const Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * set.matrix;
  SimilarityMatrix s;
  s.model = set.model_name;
  s.values = unit * unit.transpose();
  // Exact symmetry and unit diagonal; rounding can otherwise leave 1 ulp gaps.
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    s.values(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < s.values.cols(); ++j) {
      const double v = std::clamp(s.values(i, j), -1.0, 1.0);
      s.values(i, j) = v;
      s.values(j, i) = v;
    }
  }
  return s;
}

NeighborLists neighbors(const Eigen::MatrixXd& similarity, std::size_t k) {
  const auto n = static_cast<std::size_t>(similarity.rows());
  require_k(k, n);
  NeighborLists lists(n);
  std::vector<int> scratch;
  scratch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    top_k(n, i, k, [&](int j) { return similarity(ii, j); }, scratch, lists[i]);
  }
  return lists;
}

std::size_t total_overlap(const NeighborLists& a, const NeighborLists& b) {
  if (a.size() != b.size()) throw AlignError("total_overlap: neighbor lists cover different item counts");
  std::vector<char> mark(a.size(), 0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (const int j : a[i]) mark[static_cast<std::size_t>(j)] = 1;
    for (const int j : b[i]) total += mark[static_cast<std::size_t>(j)];
    for (const int j : a[i]) mark[static_cast<std::size_t>(j)] = 0;
  }
  return total;
}

double precision_at_k(const NeighborLists& a, const NeighborLists& b) {
  if (a.empty()) return 0.0;
  const std::size_t k = a.front().size();
  return static_cast<double>(total_overlap(a, b)) / static_cast<double>(a.size() * k);
}

double precision_at_k(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b, std::size_t k) {
  require_same_sentences(a, b);
  require_k(k, a.count());
  return precision_at_k(neighbors(cosine_matrix(a), k), neighbors(cosine_matrix(b), k));
}

PermutationResult permutation_test(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b, std::size_t k,
                                   std::size_t n_perm, std::uint64_t seed, std::size_t threads) {
  require_same_sentences(a, b);
  const std::size_t n = a.count();
  require_k(k, n);
  const NeighborLists lists_a = neighbors(cosine_matrix(a), k);
  const Eigen::MatrixXd sb = cosine_matrix(b).values;
  const std::size_t observed = total_overlap(lists_a, neighbors(sb, k));

  std::vector<std::size_t> hits(std::max<std::size_t>(threads, 1), 0);
  parallel_chunks(n_perm, threads, [&](std::size_t begin, std::size_t end, std::size_t worker) {
    std::vector<int> perm(n);
    std::vector<int> scratch;
    scratch.reserve(n);
    NeighborLists permuted(n);
    for (std::size_t p = begin; p < end; ++p) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(split_seed(seed, p));
      rng.shuffle(std::span<int>(perm));
      for (std::size_t i = 0; i < n; ++i) {
        const auto pi = perm[i];
        top_k(n, i, k, [&](int j) { return sb(pi, perm[static_cast<std::size_t>(j)]); }, scratch, permuted[i]);
      }
      if (total_overlap(lists_a, permuted) >= observed) ++hits[worker];
    }
  });
  PermutationResult r;
  r.n_perm = n_perm;
  r.observed = static_cast<double>(observed) / static_cast<double>(n * k);
  r.at_least_observed = std::accumulate(hits.begin(), hits.end(), std::size_t{0});
  r.p_value = static_cast<double>(r.at_least_observed + 1) / static_cast<double>(n_perm + 1);
  return r;
}

ProcrustesResult procrustes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw AlignError("procrustes: shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  const auto standardize = [](const Eigen::MatrixXd& m, const char* which) {
    Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
    const double norm = c.norm();
    if (!(norm > 0.0)) throw AlignError(std::string("procrustes: input ") + which + " has rank 0 after centring");
    return Eigen::MatrixXd(c / norm);
  };
  // Samples as columns: d x N.
  const Eigen::MatrixXd as = standardize(a, "A").transpose();
  const Eigen::MatrixXd bs = standardize(b, "B").transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(bs * as.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  ProcrustesResult r;
  r.rotation = svd.matrixU() * svd.matrixV().transpose();
  r.scale = svd.singularValues().sum();
  r.disparity = (r.scale * r.rotation * as - bs).squaredNorm();
  return r;
}

ProcrustesResult procrustes(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b) {
  require_same_sentences(a, b);
  if (a.dim() != b.dim()) {
    throw AlignError("procrustes: '" + a.model_name + "' has dim " + std::to_string(a.dim()) + " but '" +
                     b.model_name + "' has dim " + std::to_string(b.dim()) + "; harmonize dimensions first");
  }
  return procrustes(a.matrix, b.matrix);
}

std::pair<embed::EmbeddingSet, embed::EmbeddingSet> harmonize_dims(const embed::EmbeddingSet& a,
                                                                   const embed::EmbeddingSet& b) {
  require_same_sentences(a, b);
  if (a.count() < 2) throw AlignError("harmonize_dims: need at least two items");
  const std::size_t target = std::min({a.dim(), b.dim(), a.count() - 1});
  auto reduce = [&](const embed::EmbeddingSet& s) { return s.dim() > target ? embed::pca_reduce(s, target) : s; };
  return {reduce(a), reduce(b)};
}

ProcrustesResult aligned_procrustes(const embed::EmbeddingSet& a, const embed::EmbeddingSet& b) {
  const auto [ha, hb] = harmonize_dims(a, b);
  return procrustes(ha, hb);
}

AlignmentReport pairwise_report(const std::vector<embed::EmbeddingSet>& sets, const ReportOptions& options) {
  if (sets.empty()) throw AlignError("pairwise_report: no embedding sets");
  for (const auto& s : sets) require_same_sentences(sets.front(), s);
  const std::size_t n_items = sets.front().count();

  AlignmentReport rep;
  rep.heatmap_k = options.heatmap_k;
  rep.ks = options.ks;

  // Model order: ALM, then first appearance, RANDOM last.
  std::vector<std::vector<std::size_t>> members;
  auto add_model = [&](const std::string& name) {
    if (std::find(rep.models.begin(), rep.models.end(), name) != rep.models.end()) return;
    rep.models.push_back(name);
    members.emplace_back();
  };
  add_model(options.alm_model);
  for (const auto& s : sets) {
    if (s.model_name != "RANDOM") add_model(s.model_name);
  }
  for (const auto& s : sets) {
    if (s.model_name == "RANDOM") add_model(s.model_name);
  }
  std::vector<std::size_t> replica_of(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto m = static_cast<std::size_t>(
        std::find(rep.models.begin(), rep.models.end(), sets[i].model_name) - rep.models.begin());
    replica_of[i] = members[m].size();
    members[m].push_back(i);
  }
  const auto& alm = members.front();
  if (alm.empty()) throw AlignError("pairwise_report: no embedding set named '" + options.alm_model + "'");
  for (const auto& m : members) rep.replicas.push_back(m.size());

  std::set<std::size_t> all_ks(options.ks.begin(), options.ks.end());
  all_ks.insert(options.heatmap_k);
  for (const auto k : all_ks) require_k(k, n_items);
  require_k(options.permutation_k, n_items);

  std::vector<Eigen::MatrixXd> sims(sets.size());
  parallel_chunks(sets.size(), options.threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) sims[i] = cosine_matrix(sets[i]).values;
  });
  std::map<std::size_t, std::vector<NeighborLists>> lists;
  for (const auto k : all_ks) {
    auto& per_set = lists[k];
    per_set.resize(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) per_set[i] = neighbors(sims[i], k);
  }
  const auto pk = [&](std::size_t i, std::size_t j, std::size_t k) {
    return precision_at_k(lists.at(k)[i], lists.at(k)[j]);
  };

  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      for (const auto k : all_ks) {
        rep.pairs.push_back({sets[i].model_name, replica_of[i], sets[j].model_name, replica_of[j], k, pk(i, j, k)});
      }
    }
  }

  const std::size_t n_models = rep.models.size();
  rep.heatmap = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n_models), static_cast<Eigen::Index>(n_models));
  for (std::size_t m1 = 0; m1 < n_models; ++m1) {
    for (std::size_t m2 = m1 + 1; m2 < n_models; ++m2) {
      double sum = 0.0;
      std::size_t cnt = 0;
      for (const auto i : members[m1]) {
        for (const auto j : members[m2]) {
          sum += pk(i, j, options.heatmap_k);
          ++cnt;
        }
      }
      const double v = cnt ? sum / static_cast<double>(cnt) : 0.0;
      rep.heatmap(static_cast<Eigen::Index>(m1), static_cast<Eigen::Index>(m2)) = v;
      rep.heatmap(static_cast<Eigen::Index>(m2), static_cast<Eigen::Index>(m1)) = v;
    }
  }

  rep.table_models.assign(rep.models.begin() + 1, rep.models.end());
  for (const auto k : options.ks) {
    std::vector<TableCell> row;
    for (std::size_t m = 1; m < n_models; ++m) {
      std::vector<double> per_replica;
      for (const auto r : alm) {
        double sum = 0.0;
        for (const auto j : members[m]) sum += pk(r, j, k);
        per_replica.push_back(sum / static_cast<double>(members[m].size()));
      }
      TableCell cell;
      cell.n = per_replica.size();
      cell.mean = std::accumulate(per_replica.begin(), per_replica.end(), 0.0) / static_cast<double>(cell.n);
      if (cell.n > 1) {
        double ss = 0.0;
        for (const double v : per_replica) ss += (v - cell.mean) * (v - cell.mean);
        cell.sd = std::sqrt(ss / static_cast<double>(cell.n - 1));
      }
      row.push_back(cell);
    }
    rep.table.push_back(std::move(row));
  }

  std::uint64_t test_index = 0;
  for (std::size_t ri = 0; ri < alm.size(); ++ri) {
    for (std::size_t j = 0; j < sets.size(); ++j) {
      const bool other_alm = sets[j].model_name == options.alm_model;
      if (other_alm && replica_of[j] <= ri) continue;
      const auto res = permutation_test(sets[alm[ri]], sets[j], options.permutation_k, options.n_perm,
                                        split_seed(options.seed, test_index++), options.threads);
      rep.pvalues.push_back({ri, sets[j].model_name, replica_of[j], options.permutation_k, res.observed, res.p_value});
    }
  }

  for (std::size_t j = 0; j < sets.size(); ++j) {
    if (sets[j].model_name == options.alm_model) continue;
    for (std::size_t ri = 0; ri < alm.size(); ++ri) {
      const auto [ha, hb] = harmonize_dims(sets[alm[ri]], sets[j]);
      rep.procrustes.push_back({sets[j].model_name, ri, ha.dim(), procrustes(ha, hb).disparity});
    }
  }
  return rep;
}

std::string report_to_json(const AlignmentReport& r) {
  nlohmann::json j;
  j["models"] = r.models;
  j["replicas"] = r.replicas;
  j["heatmap_k"] = r.heatmap_k;
  auto& heat = j["heatmap"] = nlohmann::json::array();
  for (Eigen::Index a = 0; a < r.heatmap.rows(); ++a) {
    std::vector<double> row(r.heatmap.cols());
    for (Eigen::Index b = 0; b < r.heatmap.cols(); ++b) row[static_cast<std::size_t>(b)] = r.heatmap(a, b);
    heat.push_back(row);
  }
  j["ks"] = r.ks;
  j["table_models"] = r.table_models;
  auto& table = j["table"] = nlohmann::json::array();
  for (const auto& row : r.table) {
    auto jr = nlohmann::json::array();
    for (const auto& c : row) jr.push_back({{"mean", c.mean}, {"sd", c.sd}, {"n", c.n}});
    table.push_back(jr);
  }
  auto& pv = j["pvalues"] = nlohmann::json::array();
  for (const auto& p : r.pvalues) {
    pv.push_back({{"alm_replica", p.alm_replica}, {"model", p.model}, {"model_replica", p.model_replica},
                  {"k", p.k}, {"observed", p.observed}, {"p_value", p.p_value}});
  }
  auto& pr = j["procrustes"] = nlohmann::json::array();
  for (const auto& d : r.procrustes) {
    pr.push_back({{"model", d.model}, {"alm_replica", d.alm_replica}, {"dim", d.dim}, {"disparity", d.disparity}});
  }
  auto& pairs = j["pairs"] = nlohmann::json::array();
  for (const auto& p : r.pairs) {
    pairs.push_back({{"model_a", p.model_a}, {"replica_a", p.replica_a}, {"model_b", p.model_b},
                     {"replica_b", p.replica_b}, {"k", p.k}, {"value", p.value}});
  }
  return j.dump(1) + "\n";
}

AlignmentReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw AlignError("alignment report is not valid JSON");
  AlignmentReport r;
  try {
    r.models = j.at("models").get<std::vector<std::string>>();
    r.replicas = j.at("replicas").get<std::vector<std::size_t>>();
    r.heatmap_k = j.at("heatmap_k").get<std::size_t>();
    const auto heat = j.at("heatmap").get<std::vector<std::vector<double>>>();
    r.heatmap.resize(static_cast<Eigen::Index>(heat.size()), static_cast<Eigen::Index>(heat.size()));
    for (std::size_t a = 0; a < heat.size(); ++a) {
      if (heat[a].size() != heat.size()) throw AlignError("alignment report: heatmap is not square");
      for (std::size_t b = 0; b < heat.size(); ++b) {
        r.heatmap(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = heat[a][b];
      }
    }
    r.ks = j.at("ks").get<std::vector<std::size_t>>();
    r.table_models = j.at("table_models").get<std::vector<std::string>>();
    for (const auto& jr : j.at("table")) {
      std::vector<TableCell> row;
      for (const auto& c : jr) row.push_back({c.at("mean").get<double>(), c.at("sd").get<double>(), c.at("n").get<std::size_t>()});
      r.table.push_back(std::move(row));
    }
    for (const auto& p : j.at("pvalues")) {
      r.pvalues.push_back({p.at("alm_replica").get<std::size_t>(), p.at("model").get<std::string>(),
                           p.at("model_replica").get<std::size_t>(), p.at("k").get<std::size_t>(),
                           p.at("observed").get<double>(), p.at("p_value").get<double>()});
    }
    for (const auto& d : j.at("procrustes")) {
      r.procrustes.push_back({d.at("model").get<std::string>(), d.at("alm_replica").get<std::size_t>(),
                              d.at("dim").get<std::size_t>(), d.at("disparity").get<double>()});
    }
    for (const auto& p : j.at("pairs")) {
      r.pairs.push_back({p.at("model_a").get<std::string>(), p.at("replica_a").get<std::size_t>(),
                         p.at("model_b").get<std::string>(), p.at("replica_b").get<std::size_t>(),
                         p.at("k").get<std::size_t>(), p.at("value").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw AlignError(std::string("alignment report: ") + e.what());
  }
  if (r.heatmap.rows() != static_cast<Eigen::Index>(r.models.size())) {
    throw AlignError("alignment report: heatmap size does not match the model list");
  }
  return r;
}

std::vector<std::filesystem::path> write_report_csvs(const AlignmentReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto emit = [&](const std::string& name, const std::string& body) {
    const auto path = dir / name;
    detail::write_atomically(path, [&](std::ostream& out) { out << body; });
    written.push_back(path);
  };

  std::string heat = "model";
  for (const auto& m : r.models) heat += "," + csv_field(m);
  heat += "\n";
  for (std::size_t a = 0; a < r.models.size(); ++a) {
    heat += csv_field(r.models[a]);
    for (std::size_t b = 0; b < r.models.size(); ++b) {
      heat += "," + fmt6(r.heatmap(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
    }
    heat += "\n";
  }
  emit("heatmap_p" + std::to_string(r.heatmap_k) + ".csv", heat);

  std::string table = "k";
  for (const auto& m : r.table_models) table += "," + csv_field(m) + "," + csv_field(m + "_sd");
  table += "\n";
  for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
    table += std::to_string(r.ks[ki]);
    for (const auto& c : r.table[ki]) table += "," + fmt6(c.mean) + "," + fmt6(c.sd);
    table += "\n";
  }
  emit("table_pk.csv", table);

  std::string proc = "model,alm_replica,dim,disparity\n";
  for (const auto& d : r.procrustes) {
    proc += csv_field(d.model) + "," + std::to_string(d.alm_replica) + "," + std::to_string(d.dim) + "," +
            fmt6(d.disparity) + "\n";
  }
  emit("procrustes.csv", proc);

  std::string pv = "alm_replica,model,model_replica,k,observed,p_value\n";
  for (const auto& p : r.pvalues) {
    pv += std::to_string(p.alm_replica) + "," + csv_field(p.model) + "," + std::to_string(p.model_replica) + "," +
          std::to_string(p.k) + "," + fmt6(p.observed) + "," + fmt6(p.p_value) + "\n";
  }
  emit("pvalues.csv", pv);
  return written;
}

}  // namespace alm::align
