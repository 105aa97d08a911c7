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

// Independent reference implementations used as test oracles. Each one is the
// slow, obvious version of something the library does cleverly: plain loops,
// full sorts, Jacobi rotations, exhaustive search. None of them calls into
// alm_core numerics, so agreement means something.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <utility>
#include <vector>

namespace alm_test {

// ---- cosine / neighbours / overlap ----------------------------------------

inline Eigen::MatrixXd loop_cosine(const Eigen::MatrixXd& e) {
  const auto n = e.rows();
  Eigen::MatrixXd s(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (Eigen::Index d = 0; d < e.cols(); ++d) {
        dot += e(i, d) * e(j, d);
        ni += e(i, d) * e(i, d);
        nj += e(j, d) * e(j, d);
      }
      s(i, j) = dot / (std::sqrt(ni) * std::sqrt(nj));
    }
  }
  return s;
}

// Full stable sort of every other index by descending similarity.
inline std::vector<std::vector<int>> sort_neighbors(const Eigen::MatrixXd& s, std::size_t k) {
  std::vector<std::vector<int>> out;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    std::vector<int> others;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (j != i) others.push_back(static_cast<int>(j));
    }
    std::stable_sort(others.begin(), others.end(), [&](int a, int b) { return s(i, a) > s(i, b); });
    others.resize(k);
    out.push_back(others);
  }
  return out;
}

inline std::size_t brute_overlap(const std::vector<std::vector<int>>& a, const std::vector<std::vector<int>>& b) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (int x : a[i]) {
      for (int y : b[i]) total += (x == y);
    }
  }
  return total;
}

// ---- symmetric eigensolver (cyclic Jacobi) ---------------------------------

struct Eigen2 {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // columns
};

inline Eigen2 jacobi_eigen(Eigen::MatrixXd a) {
  const auto n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
  Eigen2 out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

// PCA through the sample covariance. Scores are returned with each column's
// sign fixed so its largest-magnitude loading is positive.
inline Eigen::MatrixXd covariance_pca(const Eigen::MatrixXd& x, std::size_t d) {
  Eigen::MatrixXd c = x;
  for (Eigen::Index j = 0; j < c.cols(); ++j) {
    double mean = 0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) mean += c(i, j);
    mean /= static_cast<double>(c.rows());
    for (Eigen::Index i = 0; i < c.rows(); ++i) c(i, j) -= mean;
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(c.cols(), c.cols());
  for (Eigen::Index a = 0; a < c.cols(); ++a)
    for (Eigen::Index b = 0; b < c.cols(); ++b)
      for (Eigen::Index i = 0; i < c.rows(); ++i) cov(a, b) += c(i, a) * c(i, b) / static_cast<double>(c.rows() - 1);
  auto eig = jacobi_eigen(cov);
  Eigen::MatrixXd w = eig.vectors.leftCols(static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < w.rows(); ++i)
      if (std::abs(w(i, j)) > std::abs(w(arg, j))) arg = i;
    if (w(arg, j) < 0) w.col(j) *= -1;
  }
  return c * w;
}

// ---- Procrustes, 2-D ---------------------------------------------------------

inline Eigen::MatrixXd standardize(Eigen::MatrixXd m) {
  m.rowwise() -= m.colwise().mean();
  return m / m.norm();
}

// Best disparity over rotations and reflections sampled on a dense angle grid,
// with the optimal scale for each candidate. Rows are samples.
inline double grid_procrustes_2d(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int steps = 100000) {
  const Eigen::MatrixXd as = standardize(a), bs = standardize(b);
  double best = 1e300;
  for (int reflect = 0; reflect < 2; ++reflect) {
    for (int i = 0; i < steps; ++i) {
      const double t = 2 * std::numbers::pi * i / steps;
      Eigen::Matrix2d r;
      r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
      if (reflect) r.col(1) *= -1;
      const Eigen::MatrixXd rotated = as * r.transpose();
      const double s = std::max(0.0, (rotated.array() * bs.array()).sum());
      best = std::min(best, (s * rotated - bs).squaredNorm());
    }
  }
  return best;
}

}  // namespace alm_test
