#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "weakdx/embed.hpp"
#include "weakdx/hdbscan.hpp"
#include "weakdx/textnorm.hpp"

namespace weakdx {

/// Document frequencies over the clustered collection (one document per
/// unique diagnosis string).
struct CorpusTokenStats {
  std::unordered_map<std::string, std::size_t> doc_freq;
  std::size_t n_docs = 0;

  static CorpusTokenStats from_documents(const std::vector<TokenList>& docs) {
    CorpusTokenStats stats;
    stats.n_docs = docs.size();
    for (const auto& doc : docs) {
      std::unordered_set<std::string> seen(doc.begin(), doc.end());
      for (const auto& tok : seen) ++stats.doc_freq[tok];
    }
    return stats;
  }

  double fraction(const std::string& token) const {
    if (n_docs == 0) return 0.0;
    auto it = doc_freq.find(token);
    double f = it == doc_freq.end() ? 0.0 : static_cast<double>(it->second);
    return std::max(f, 1.0) / static_cast<double>(n_docs);
  }
};

struct KeywordParams {
  std::size_t max_keywords = 6;
  double min_cluster_freq = 0.30;  // token must appear in this share of members
  double ratio_threshold = 3.0;    // cluster fraction over corpus fraction

  void validate() const {
    if (max_keywords < 1)
      throw std::invalid_argument("max_keywords must be >= 1");
    if (min_cluster_freq <= 0.0 || ratio_threshold <= 0.0)
      throw std::invalid_argument("keyword thresholds must be positive");
  }
};

/// Keyword representation of one cluster. keywords are ordered by descending
/// contrast score (ties alphabetical); displays and re-embedding use the
/// alphabetical join from keyword_string().
struct ClusterSummary {
  int cluster_id = 0;
  std::size_t size = 0;
  std::vector<std::string> keywords;
  std::vector<std::string> member_string_ids;
  int level = 1;
  std::vector<int> children;  // level-1 cluster ids (level 2 only)
  bool placeholder_keywords = false;

  std::string keyword_string() const {
    std::vector<std::string> sorted = keywords;
    std::sort(sorted.begin(), sorted.end());
    return join_tokens(sorted);
  }
};

/// Tokens frequent within the cluster but rare corpus-wide:
/// score(w) = cluster_fraction(w) / max(corpus_fraction(w), 1/N), keeping w
/// iff cluster_fraction >= min_cluster_freq and score >= ratio_threshold.
inline std::vector<std::string> cluster_keywords(
    const std::vector<TokenList>& members, const CorpusTokenStats& stats,
    const KeywordParams& params) {
  params.validate();
  bool any_nonempty = false;
  for (const auto& m : members)
    if (!m.empty()) any_nonempty = true;
  if (!any_nonempty)
    throw std::invalid_argument("cluster_keywords: all members are empty");

  std::map<std::string, std::size_t> member_count;
  for (const auto& m : members) {
    std::set<std::string> seen(m.begin(), m.end());
    for (const auto& tok : seen) ++member_count[tok];
  }

  struct Scored {
    double score;
    std::string token;
  };
  std::vector<Scored> passed;
  const double n_members = static_cast<double>(members.size());
  for (const auto& [token, count] : member_count) {
    double cluster_frac = static_cast<double>(count) / n_members;
    if (cluster_frac < params.min_cluster_freq) continue;
    double score = cluster_frac / stats.fraction(token);
    if (score < params.ratio_threshold) continue;
    passed.push_back({score, token});
  }
  std::sort(passed.begin(), passed.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.token < b.token;
  });
  if (passed.size() > params.max_keywords) passed.resize(params.max_keywords);

  std::vector<std::string> keywords;
  keywords.reserve(passed.size());
  for (auto& s : passed) keywords.push_back(std::move(s.token));
  return keywords;
}

/// Builds level-1 summaries from a cluster assignment over unique strings.
/// string_ids and tokens run parallel to the clustered points.
inline std::vector<ClusterSummary> build_level1_summaries(
    const ClusterAssignment& assign, const std::vector<std::string>& string_ids,
    const std::vector<TokenList>& tokens, const CorpusTokenStats& stats,
    const KeywordParams& params) {
  if (string_ids.size() != assign.labels.size() ||
      tokens.size() != assign.labels.size())
    throw std::invalid_argument("build_level1_summaries: size mismatch");

  std::vector<ClusterSummary> summaries(assign.n_clusters);
  std::vector<std::vector<TokenList>> member_tokens(assign.n_clusters);
  for (std::size_t c = 0; c < assign.n_clusters; ++c) {
    summaries[c].cluster_id = static_cast<int>(c);
    summaries[c].level = 1;
  }
  for (std::size_t i = 0; i < assign.labels.size(); ++i) {
    int label = assign.labels[i];
    if (label < 0) continue;
    summaries[label].member_string_ids.push_back(string_ids[i]);
    member_tokens[label].push_back(tokens[i]);
  }
  for (std::size_t c = 0; c < assign.n_clusters; ++c) {
    summaries[c].size = summaries[c].member_string_ids.size();
    auto kws = cluster_keywords(member_tokens[c], stats, params);
    if (kws.empty()) {
      summaries[c].keywords = {"_cluster_" + std::to_string(c)};
      summaries[c].placeholder_keywords = true;
    } else {
      summaries[c].keywords = std::move(kws);
    }
  }
  return summaries;
}

struct SecondLevelConfig {
  EmbedderConfig embedder;
  std::size_t pca_dim = 16;
  HdbscanParams hdbscan{2, 1, Metric::euclidean};
  KeywordParams keywords;
};

/// Second-level clustering: each first-level cluster is rendered as its
/// alphabetical keyword string, embedded and clustered with the same
/// pipeline; co-clustered first-level clusters merge, noise passes through
/// as singletons, and keywords are recomputed over the merged members.
inline std::vector<ClusterSummary> second_level_merge(
    const std::vector<ClusterSummary>& level1,
    const std::unordered_map<std::string, TokenList>& tokens_by_string_id,
    const CorpusTokenStats& stats, const SecondLevelConfig& cfg) {
  if (level1.size() < 2)
    throw std::invalid_argument("second_level_merge: need >= 2 level-1 clusters");

  const std::size_t n = level1.size();
  std::vector<EmbeddingVector> vectors;
  vectors.reserve(n);
  for (const auto& summary : level1) {
    std::vector<std::string> toks = summary.keywords;
    std::sort(toks.begin(), toks.end());
    vectors.push_back(embed_text(toks, cfg.embedder));
  }

  std::size_t k = std::min({cfg.pca_dim, cfg.embedder.dim, n - 1});
  PcaModel pca = fit_pca(vectors, std::max<std::size_t>(1, k));
  std::vector<Point> points;
  points.reserve(n);
  for (const auto& v : vectors) points.push_back(project_pca(pca, v));

  HdbscanParams params = cfg.hdbscan;
  params.min_samples = std::min<std::size_t>(params.effective_min_samples(), n - 1);
  ClusterAssignment assign = cluster(points, params);

  std::vector<ClusterSummary> level2;
  auto make_merged = [&](const std::vector<std::size_t>& l1_indices, int id) {
    ClusterSummary merged;
    merged.cluster_id = id;
    merged.level = 2;
    std::vector<TokenList> member_tokens;
    for (std::size_t idx : l1_indices) {
      const auto& child = level1[idx];
      merged.children.push_back(child.cluster_id);
      merged.size += child.size;
      for (const auto& sid : child.member_string_ids) {
        merged.member_string_ids.push_back(sid);
        auto it = tokens_by_string_id.find(sid);
        if (it == tokens_by_string_id.end())
          throw std::invalid_argument("second_level_merge: unknown string id " +
                                      sid);
        member_tokens.push_back(it->second);
      }
    }
    auto kws = cluster_keywords(member_tokens, stats, cfg.keywords);
    if (kws.empty()) {
      merged.keywords = {"_cluster_" + std::to_string(id)};
      merged.placeholder_keywords = true;
    } else {
      merged.keywords = std::move(kws);
    }
    return merged;
  };

  int next_id = 0;
  for (std::size_t c = 0; c < assign.n_clusters; ++c) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < n; ++i)
      if (assign.labels[i] == static_cast<int>(c)) group.push_back(i);
    level2.push_back(make_merged(group, next_id++));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (assign.labels[i] < 0) level2.push_back(make_merged({i}, next_id++));
  return level2;
}

}  // namespace weakdx
