// Test-only reference implementations, kept independent of the library code
// paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace oracles {

// ---------------------------------------------------------------------------
// Kruskal MST over an explicit weight matrix.
// ---------------------------------------------------------------------------

/// Total MST weight, summed in ascending edge order so it can be compared
/// exactly against another MST's sorted weight sum.
inline double kruskal_mst_weight(const std::vector<std::vector<double>>& w) {
  const std::size_t n = w.size();
  struct Edge {
    std::size_t a, b;
    double weight;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j, w[i][j]});
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    if (x.weight != y.weight) return x.weight < y.weight;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& e : edges) {
    std::size_t ra = find(e.a), rb = find(e.b);
    if (ra == rb) continue;
    parent[ra] = rb;
    total += e.weight;
    if (++used == n - 1) break;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Cyclic Jacobi eigenvalues of a symmetric matrix.
// ---------------------------------------------------------------------------

inline std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (std::size_t sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::fabs(a[p][q]) < 1e-300) continue;
        double theta = 0.5 * std::atan2(2.0 * a[p][q], a[q][q] - a[p][p]);
        double c = std::cos(theta), s = std::sin(theta);
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
  std::sort(values.begin(), values.end(), std::greater<double>());
  return values;
}

// ---------------------------------------------------------------------------
// Brute-force ROC AUC: pair counting with half credit for ties.
// ---------------------------------------------------------------------------

inline double pair_counting_auc(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  long long wins2 = 0;  // 2*wins + ties
  long long n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      ++n_pos;
      continue;
    }
    ++n_neg;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) wins2 += 2;
      else if (scores[i] == scores[j]) wins2 += 1;
    }
  }
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("pair_counting_auc: need both classes");
  return static_cast<double>(wins2) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Brute-force k-th nearest neighbor distance.
// ---------------------------------------------------------------------------

inline std::vector<double> knn_core_distances(
    const std::vector<std::vector<double>>& points, std::size_t k) {
  const std::size_t n = points.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < points[i].size(); ++c) {
        double diff = points[i][c] - points[j][c];
        s += diff * diff;
      }
      d.push_back(std::sqrt(s));
    }
    std::sort(d.begin(), d.end());
    out[i] = d.at(k - 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adjusted Rand index; noise labels (-1) count as singleton-style clusters.
// ---------------------------------------------------------------------------

inline double adjusted_rand_index(const std::vector<int>& a,
                                  const std::vector<int>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("adjusted_rand_index: size mismatch");
  std::map<std::pair<int, int>, long long> cont;
  std::map<int, long long> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++cont[{a[i], b[i]}];
    ++ra[a[i]];
    ++rb[b[i]];
  }
  auto choose2 = [](long long m) { return m * (m - 1) / 2.0; };
  double sum_cont = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, count] : cont) sum_cont += choose2(count);
  for (const auto& [key, count] : ra) sum_a += choose2(count);
  for (const auto& [key, count] : rb) sum_b += choose2(count);
  double total = choose2(static_cast<long long>(a.size()));
  double expected = sum_a * sum_b / total;
  double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_cont - expected) / (max_index - expected);
}

}  // namespace oracles
