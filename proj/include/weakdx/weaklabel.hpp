#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "weakdx/corpus.hpp"
#include "weakdx/extraction.hpp"
#include "weakdx/keywords.hpp"

namespace weakdx {

/// Positive/negative keyword rule mapping clusters to a disease.
struct DiseaseDefinition {
  std::string disease;
  std::vector<std::string> positive;
  std::vector<std::string> negative;

  void validate() const {
    if (positive.empty())
      throw std::invalid_argument("definition for " + disease +
                                  " needs at least one positive keyword");
    std::set<std::string> pos(positive.begin(), positive.end());
    for (const auto& tok : negative)
      if (pos.count(tok))
        throw std::invalid_argument("definition for " + disease +
                                    ": keyword '" + tok +
                                    "' is both positive and negative");
    auto check_normalized = [&](const std::string& tok) {
      TokenList t = normalize_tokens(tok);
      if (t.size() != 1 || t[0] != tok)
        throw std::invalid_argument("definition for " + disease +
                                    ": keyword '" + tok +
                                    "' is not a normalized token");
    };
    for (const auto& tok : positive) check_normalized(tok);
    for (const auto& tok : negative) check_normalized(tok);
  }

  static std::vector<DiseaseDefinition> defaults() {
    return {{"bronchiolite", {"bronchiolite"}, {}},
            {"bronchiolite", {"broncospasmo", "febbre"}, {}}};
  }

  static std::vector<DiseaseDefinition> list_from_json(const nlohmann::json& j) {
    if (!j.is_array())
      throw std::runtime_error("definitions file must be a JSON array");
    std::vector<DiseaseDefinition> defs;
    for (const auto& item : j) {
      DiseaseDefinition d;
      d.disease = item.at("disease").get<std::string>();
      d.positive = item.at("positive").get<std::vector<std::string>>();
      if (item.contains("negative"))
        d.negative = item.at("negative").get<std::vector<std::string>>();
      d.validate();
      defs.push_back(std::move(d));
    }
    if (defs.empty()) throw std::runtime_error("definitions file is empty");
    return defs;
  }

  static std::vector<DiseaseDefinition> list_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open definitions file " + path);
    nlohmann::json j;
    in >> j;
    return list_from_json(j);
  }

  static nlohmann::json list_to_json(const std::vector<DiseaseDefinition>& defs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : defs)
      arr.push_back({{"disease", d.disease},
                     {"positive", d.positive},
                     {"negative", d.negative}});
    return arr;
  }
};

/// Which clusters map to the disease, with the definition that fired.
struct ClusterSelection {
  std::vector<int> selected;                    // sorted cluster ids
  std::map<int, std::size_t> fired_definition;  // cluster id -> definition index
  int level = 1;
};

/// A cluster is selected iff some definition has all its positive keywords
/// in the cluster's keyword set and none of its negative ones.
inline ClusterSelection select_clusters(
    const std::vector<ClusterSummary>& summaries,
    const std::vector<DiseaseDefinition>& defs) {
  for (const auto& d : defs) d.validate();
  ClusterSelection out;
  if (!summaries.empty()) out.level = summaries.front().level;
  for (const auto& summary : summaries) {
    if (summary.level != out.level)
      throw std::invalid_argument("select_clusters: summaries mix levels");
    std::set<std::string> kws(summary.keywords.begin(), summary.keywords.end());
    for (std::size_t di = 0; di < defs.size(); ++di) {
      const auto& d = defs[di];
      bool all_pos = std::all_of(d.positive.begin(), d.positive.end(),
                                 [&](const std::string& t) { return kws.count(t); });
      bool any_neg = std::any_of(d.negative.begin(), d.negative.end(),
                                 [&](const std::string& t) { return kws.count(t); });
      if (all_pos && !any_neg) {
        out.selected.push_back(summary.cluster_id);
        out.fired_definition[summary.cluster_id] = di;
        break;
      }
    }
  }
  std::sort(out.selected.begin(), out.selected.end());
  return out;
}

/// Per-letter weak labels derived from cluster membership of the letter's
/// trimmed diagnosis string.
struct WeakLabelSet {
  std::map<std::string, int> labels;  // every corpus letter -> 0/1
  std::vector<int> selected_clusters;
  int selection_level = 1;
  std::vector<DiseaseDefinition> definitions_used;
  std::map<std::string, int> letter_cluster;  // letters whose string clustered

  std::size_t positives() const {
    std::size_t c = 0;
    for (const auto& [id, l] : labels) c += l;
    return c;
  }
};

/// Letters whose trimmed diagnosis string belongs to a selected cluster get
/// label 1; letters without a string, with degenerate embeddings, or with
/// noise-assigned strings get 0.
inline WeakLabelSet assign_weak_labels(
    const Corpus& corpus, const ExtractionOutput& extraction,
    const std::unordered_map<std::string, int>& cluster_of_trimmed,
    const ClusterSelection& selection,
    const std::vector<DiseaseDefinition>& defs) {
  WeakLabelSet out;
  out.selected_clusters = selection.selected;
  out.selection_level = selection.level;
  out.definitions_used = defs;
  std::set<int> selected(selection.selected.begin(), selection.selected.end());

  for (const auto& letter : corpus.letters) {
    int label = 0;
    const DiagnosisString* diag = extraction.for_letter(letter.id);
    if (diag) {
      auto it = cluster_of_trimmed.find(diag->trimmed);
      if (it != cluster_of_trimmed.end() && it->second >= 0) {
        out.letter_cluster[letter.id] = it->second;
        if (selected.count(it->second)) label = 1;
      }
    }
    out.labels[letter.id] = label;
  }
  return out;
}

}  // namespace weakdx
