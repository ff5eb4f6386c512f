#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace weakdx {

using Point = std::vector<double>;

enum class Metric { euclidean, cosine_distance };

struct HdbscanParams {
  std::size_t min_cluster_size = 5;
  std::size_t min_samples = 0;  // 0 means: use min_cluster_size
  Metric metric = Metric::euclidean;

  std::size_t effective_min_samples() const {
    return min_samples == 0 ? min_cluster_size : min_samples;
  }
};

struct ClusterAssignment {
  std::vector<int> labels;  // -1 noise, clusters 0..n_clusters-1 (dense)
  std::vector<double> probabilities;
  std::size_t n_clusters = 0;
};

/// Condensed cluster tree. Point ids are 0..n-1; cluster nodes are >= n with
/// the root at n. lambda = 1/distance at the recorded departure or birth.
struct CondensedEdge {
  int parent;
  int child;
  double lambda;
  std::size_t child_size;
};

struct CondensedTree {
  std::vector<CondensedEdge> edges;
  std::map<int, double> stabilities;
  int root = -1;
  std::size_t n_points = 0;
};

namespace hdetail {

inline double point_distance(const Point& a, const Point& b, Metric metric) {
  switch (metric) {
    case Metric::euclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
      }
      return std::sqrt(s);
    }
    case Metric::cosine_distance: {
      double dotp = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        dotp += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      if (na == 0.0 || nb == 0.0) return na == nb ? 0.0 : 1.0;
      return 1.0 - dotp / std::sqrt(na * nb);
    }
  }
  return 0.0;
}

}  // namespace hdetail

/// Distance from each point to its k-th nearest neighbor (self excluded).
inline std::vector<double> core_distances(const std::vector<Point>& points,
                                          std::size_t k, Metric metric) {
  const std::size_t n = points.size();
  if (n <= k)
    throw std::invalid_argument("core_distances: need more points than k (n=" +
                                std::to_string(n) + ", k=" + std::to_string(k) +
                                ")");
  if (k < 1) throw std::invalid_argument("core_distances: k must be >= 1");
  std::vector<double> core(n, 0.0);
  std::vector<double> dists;
  for (std::size_t i = 0; i < n; ++i) {
    dists.clear();
    dists.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dists.push_back(hdetail::point_distance(points[i], points[j], metric));
    std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
    core[i] = dists[k - 1];
  }
  return core;
}

struct MstEdge {
  std::size_t a;
  std::size_t b;  // a < b
  double weight;
};

/// Minimum spanning tree of the complete mutual-reachability graph
/// d_mr(a,b) = max(core_a, core_b, d(a,b)), via Prim with deterministic
/// smallest-index tie-breaking.
inline std::vector<MstEdge> mutual_reachability_mst(
    const std::vector<Point>& points, const std::vector<double>& core,
    Metric metric) {
  const std::size_t n = points.size();
  if (n < 2)
    throw std::invalid_argument("mutual_reachability_mst: need at least 2 points");
  if (core.size() != n)
    throw std::invalid_argument("mutual_reachability_mst: core size mismatch");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, inf);
  std::vector<std::size_t> from(n, 0);

  std::vector<MstEdge> edges;
  edges.reserve(n - 1);

  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t added = 1; added < n; ++added) {
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      double d = hdetail::point_distance(points[current], points[v], metric);
      double mr = std::max({core[current], core[v], d});
      if (mr < best[v]) {  // strict: first reaching vertex keeps the edge
        best[v] = mr;
        from[v] = current;
      }
    }
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v)
      if (!in_tree[v] && (pick == n || best[v] < best[pick])) pick = v;
    in_tree[pick] = true;
    edges.push_back({std::min(pick, from[pick]), std::max(pick, from[pick]),
                     best[pick]});
    current = pick;
  }
  return edges;
}

namespace hdetail {

struct DendroNode {
  int left = -1;
  int right = -1;   // children: point ids < n, internal nodes >= n
  double dist = 0;  // merge distance
  std::size_t size = 1;
};

// Single-linkage dendrogram from MST edges sorted by (weight, a, b).
inline std::vector<DendroNode> build_dendrogram(std::vector<MstEdge> edges,
                                                std::size_t n) {
  std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) {
    if (x.weight != y.weight) return x.weight < y.weight;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  std::vector<DendroNode> nodes(2 * n - 1);
  std::vector<int> owner(2 * n - 1);  // current dendrogram node of each root
  std::vector<int> uf(2 * n - 1);
  for (std::size_t i = 0; i < 2 * n - 1; ++i) {
    uf[i] = static_cast<int>(i);
    owner[i] = static_cast<int>(i);
  }
  auto find = [&](int x) {
    while (uf[x] != x) {
      uf[x] = uf[uf[x]];
      x = uf[x];
    }
    return x;
  };

  int next = static_cast<int>(n);
  for (const auto& e : edges) {
    int ra = find(static_cast<int>(e.a));
    int rb = find(static_cast<int>(e.b));
    int na = owner[ra], nb = owner[rb];
    DendroNode& parent = nodes[next];
    parent.left = na;
    parent.right = nb;
    parent.dist = e.weight;
    parent.size = nodes[na].size + nodes[nb].size;
    uf[ra] = next;
    uf[rb] = next;
    owner[next] = next;
    ++next;
  }
  return nodes;
}

inline void collect_points(const std::vector<DendroNode>& nodes, int node,
                           std::size_t n, std::vector<int>& out) {
  std::vector<int> stack{node};
  while (!stack.empty()) {
    int cur = stack.back();
    stack.pop_back();
    if (cur < static_cast<int>(n)) {
      out.push_back(cur);
    } else {
      stack.push_back(nodes[cur].left);
      stack.push_back(nodes[cur].right);
    }
  }
}

}  // namespace hdetail

/// Condenses the single-linkage tree by min_cluster_size and selects stable
/// clusters by excess of mass. A split where only one side reaches
/// min_cluster_size starts a new cluster node for that side while the small
/// side's points fall out; the root itself is never a selectable cluster.
inline std::pair<CondensedTree, ClusterAssignment> condense_extract(
    const std::vector<MstEdge>& mst, std::size_t n,
    const HdbscanParams& params) {
  if (n < 2 || mst.size() != n - 1)
    throw std::invalid_argument("condense_extract: invalid MST");
  const std::size_t mcs = params.min_cluster_size;
  if (mcs < 2)
    throw std::invalid_argument("condense_extract: min_cluster_size must be >= 2");

  const auto nodes = hdetail::build_dendrogram(mst, n);
  const int dendro_root = static_cast<int>(2 * n - 2);

  // lambda = 1/distance; zero distances (duplicate points) get twice the
  // largest finite lambda so stability sums stay finite.
  double max_lambda = 0.0;
  for (std::size_t i = n; i < 2 * n - 1; ++i)
    if (nodes[i].dist > 0.0) max_lambda = std::max(max_lambda, 1.0 / nodes[i].dist);
  const double dup_lambda = max_lambda > 0.0 ? 2.0 * max_lambda : 1.0;
  auto lam = [&](double dist) { return dist > 0.0 ? 1.0 / dist : dup_lambda; };

  CondensedTree tree;
  tree.n_points = n;
  tree.root = static_cast<int>(n);

  std::map<int, double> birth;           // condensed cluster -> birth lambda
  std::map<int, std::vector<int>> kids;  // condensed cluster -> cluster children
  std::map<int, double> fall_sum;        // sum over departures of lambda*size
  std::map<int, std::size_t> departed;   // total size departed from cluster
  std::map<int, std::size_t> csize;      // condensed cluster -> member count
  std::vector<double> point_lambda(n, 0.0);
  std::vector<int> point_parent(n, -1);  // condensed cluster a point fell from

  int next_cluster = static_cast<int>(n);
  const int root_cluster = next_cluster++;
  birth[root_cluster] = 0.0;
  csize[root_cluster] = n;
  fall_sum[root_cluster] = 0.0;
  departed[root_cluster] = 0;

  auto drop_points = [&](int dendro_node, int cluster, double lambda) {
    std::vector<int> pts;
    hdetail::collect_points(nodes, dendro_node, n, pts);
    std::sort(pts.begin(), pts.end());
    for (int p : pts) {
      tree.edges.push_back({cluster, p, lambda, 1});
      point_lambda[p] = lambda;
      point_parent[p] = cluster;
      fall_sum[cluster] += lambda;
      departed[cluster] += 1;
    }
  };

  struct Frame {
    int dendro;
    int cluster;
  };
  std::vector<Frame> stack{{dendro_root, root_cluster}};
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    const auto& node = nodes[f.dendro];
    const double lambda = lam(node.dist);
    const std::size_t left_size =
        node.left < static_cast<int>(n) ? 1 : nodes[node.left].size;
    const std::size_t right_size =
        node.right < static_cast<int>(n) ? 1 : nodes[node.right].size;
    const bool left_big = left_size >= mcs;
    const bool right_big = right_size >= mcs;

    if (left_big && right_big) {
      int cl = next_cluster++;
      int cr = next_cluster++;
      for (int c : {cl, cr}) {
        birth[c] = lambda;
        fall_sum[c] = 0.0;
        departed[c] = 0;
      }
      csize[cl] = left_size;
      csize[cr] = right_size;
      kids[f.cluster].push_back(cl);
      kids[f.cluster].push_back(cr);
      tree.edges.push_back({f.cluster, cl, lambda, left_size});
      tree.edges.push_back({f.cluster, cr, lambda, right_size});
      fall_sum[f.cluster] += lambda * static_cast<double>(left_size + right_size);
      departed[f.cluster] += left_size + right_size;
      stack.push_back({node.right, cr});
      stack.push_back({node.left, cl});
    } else if (left_big || right_big) {
      int big = left_big ? node.left : node.right;
      int small = left_big ? node.right : node.left;
      std::size_t big_size = left_big ? left_size : right_size;
      drop_points(small, f.cluster, lambda);
      int cb = next_cluster++;
      birth[cb] = lambda;
      fall_sum[cb] = 0.0;
      departed[cb] = 0;
      csize[cb] = big_size;
      kids[f.cluster].push_back(cb);
      tree.edges.push_back({f.cluster, cb, lambda, big_size});
      fall_sum[f.cluster] += lambda * static_cast<double>(big_size);
      departed[f.cluster] += big_size;
      stack.push_back({big, cb});
    } else {
      drop_points(f.dendro, f.cluster, lambda);
    }
  }

  // Stability: sum over departures of (lambda - birth) * size.
  for (const auto& [cluster, sum] : fall_sum)
    tree.stabilities[cluster] =
        sum - birth[cluster] * static_cast<double>(departed[cluster]);

  // Excess of mass, children before parents (ids increase downward).
  std::map<int, double> subtree_stability;
  std::map<int, bool> chosen;
  for (auto it = tree.stabilities.rbegin(); it != tree.stabilities.rend(); ++it) {
    int c = it->first;
    double own = it->second;
    double child_sum = 0.0;
    for (int ch : kids[c]) child_sum += subtree_stability[ch];
    if (c == root_cluster) {
      chosen[c] = false;
      subtree_stability[c] = child_sum;
    } else if (kids[c].empty()) {
      chosen[c] = true;
      subtree_stability[c] = own;
    } else if (own > child_sum) {
      chosen[c] = true;
      subtree_stability[c] = own;
    } else {
      chosen[c] = false;
      subtree_stability[c] = child_sum;
    }
  }
  // Keep only the topmost chosen cluster along each path.
  std::vector<int> selected;
  {
    std::vector<std::pair<int, bool>> walk{{root_cluster, false}};
    while (!walk.empty()) {
      auto [c, covered] = walk.back();
      walk.pop_back();
      bool take = !covered && chosen[c];
      if (take) selected.push_back(c);
      for (int ch : kids[c]) walk.push_back({ch, covered || take});
    }
    std::sort(selected.begin(), selected.end());
  }

  // Dense labels: every point in a selected cluster's subtree is a member.
  std::map<int, int> dense;
  for (std::size_t i = 0; i < selected.size(); ++i)
    dense[selected[i]] = static_cast<int>(i);

  std::map<int, int> nearest_selected;  // condensed cluster -> dense label
  {
    std::vector<std::pair<int, int>> walk{{root_cluster, -1}};
    while (!walk.empty()) {
      auto [c, label] = walk.back();
      walk.pop_back();
      auto it = dense.find(c);
      if (it != dense.end()) label = it->second;
      nearest_selected[c] = label;
      for (int ch : kids[c]) walk.push_back({ch, label});
    }
  }

  ClusterAssignment assign;
  assign.labels.assign(n, -1);
  assign.probabilities.assign(n, 0.0);
  assign.n_clusters = selected.size();

  std::vector<double> max_lambda_in(selected.size(), 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    int label = nearest_selected[point_parent[p]];
    assign.labels[p] = label;
    if (label >= 0)
      max_lambda_in[label] = std::max(max_lambda_in[label], point_lambda[p]);
  }
  for (std::size_t p = 0; p < n; ++p) {
    int label = assign.labels[p];
    if (label < 0) continue;
    double denom = max_lambda_in[label];
    assign.probabilities[p] = denom > 0.0 ? point_lambda[p] / denom : 1.0;
  }
  return {std::move(tree), std::move(assign)};
}

/// Full HDBSCAN run: core distances, mutual-reachability MST, condensed tree
/// with excess-of-mass extraction.
inline ClusterAssignment cluster(const std::vector<Point>& points,
                                 const HdbscanParams& params) {
  const std::size_t n = points.size();
  if (n < 2) throw std::invalid_argument("cluster: need at least 2 points");
  const std::size_t k = params.effective_min_samples();
  if (k > n - 1)
    throw std::invalid_argument("cluster: min_samples must be <= n-1");
  auto core = core_distances(points, k, params.metric);
  auto mst = mutual_reachability_mst(points, core, params.metric);
  return condense_extract(mst, n, params).second;
}

inline ClusterAssignment cluster_with_tree(const std::vector<Point>& points,
                                           const HdbscanParams& params,
                                           CondensedTree& tree_out) {
  const std::size_t n = points.size();
  if (n < 2) throw std::invalid_argument("cluster: need at least 2 points");
  const std::size_t k = params.effective_min_samples();
  if (k > n - 1)
    throw std::invalid_argument("cluster: min_samples must be <= n-1");
  auto core = core_distances(points, k, params.metric);
  auto mst = mutual_reachability_mst(points, core, params.metric);
  auto [tree, assign] = condense_extract(mst, n, params);
  tree_out = std::move(tree);
  return assign;
}

}  // namespace weakdx
