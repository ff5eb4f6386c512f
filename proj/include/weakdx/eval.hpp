#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "weakdx/classify.hpp"
#include "weakdx/rng.hpp"

namespace weakdx {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // absent for classifiers without scores
  std::size_t support = 0;    // positive labels in the truth

  nlohmann::json to_json() const {
    nlohmann::json j{{"precision", precision},
                     {"recall", recall},
                     {"f1", f1},
                     {"support", support}};
    if (auc) j["auc"] = *auc;
    return j;
  }
};

/// Positive-class precision/recall/F1. Precision is 0 when nothing was
/// predicted positive; F1 is 0 when P+R is 0.
inline Metrics prf1(const std::vector<int>& predictions,
                    const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("prf1: predictions/labels length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0, pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bool p = predictions[i] != 0, t = labels[i] != 0;
    pos += t;
    if (p && t) ++tp;
    if (p && !t) ++fp;
    if (!p && t) ++fn;
  }
  if (pos == 0) throw std::invalid_argument("prf1: no positive labels");
  Metrics m;
  m.support = pos;
  m.precision = (tp + fp) == 0 ? 0.0
                               : static_cast<double>(tp) /
                                     static_cast<double>(tp + fp);
  m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Computed from midranks; the numerator stays integral so results equal
/// brute-force pair counting exactly.
inline double roc_auc(const std::vector<double>& scores,
                      const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_auc: scores/labels length mismatch");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l ? 1 : 0;
  std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("roc_auc: need both classes");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Twice the positive rank sum, accumulated per tie group.
  long long ranksum2 = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    long long midrank2 = static_cast<long long>(i + 1 + j);  // 2 * midrank
    for (std::size_t t = i; t < j; ++t)
      if (labels[idx[t]]) ranksum2 += midrank2;
    i = j;
  }
  long long np = static_cast<long long>(n_pos);
  long long numerator2 = ranksum2 - np * (np + 1);
  return static_cast<double>(numerator2) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Fold plans
// ---------------------------------------------------------------------------

struct FoldPlan {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::string stratify_on;
  std::unordered_map<std::string, std::size_t> assignment;  // id -> fold

  std::size_t fold_of(const std::string& id) const {
    auto it = assignment.find(id);
    if (it == assignment.end())
      throw std::runtime_error("fold plan does not cover id " + id);
    return it->second;
  }
};

/// Stratified folds: seeded shuffle within each class, then round-robin, so
/// per-class fold counts differ by at most one.
inline FoldPlan stratified_folds(
    const std::vector<std::pair<std::string, int>>& labeled_ids, std::size_t k,
    std::uint64_t seed, const std::string& stratify_on = "labels") {
  if (k < 2) throw std::invalid_argument("stratified_folds: k must be >= 2");
  if (k > labeled_ids.size())
    throw std::invalid_argument("stratified_folds: k exceeds item count");
  std::size_t n_pos = 0;
  for (const auto& [id, label] : labeled_ids) n_pos += label ? 1 : 0;
  if (n_pos == 0)
    throw std::invalid_argument("stratified_folds: need at least one positive");

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.stratify_on = stratify_on;
  for (int cls : {1, 0}) {
    std::vector<std::string> members;
    for (const auto& [id, label] : labeled_ids)
      if ((label != 0) == (cls != 0)) members.push_back(id);
    Rng rng(derive_seed(seed, "folds-class-" + std::to_string(cls)));
    rng.shuffle(members);
    for (std::size_t i = 0; i < members.size(); ++i)
      plan.assignment[members[i]] = i % k;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Cross-validation reports
// ---------------------------------------------------------------------------

struct Agg {
  double mean = 0.0;
  double stddev = 0.0;  // sample std over folds
  std::vector<double> values;
};

inline Agg aggregate(std::vector<double> values) {
  Agg a;
  a.values = std::move(values);
  if (a.values.empty()) return a;
  for (double v : a.values) a.mean += v;
  a.mean /= static_cast<double>(a.values.size());
  if (a.values.size() >= 2) {
    double ss = 0.0;
    for (double v : a.values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(a.values.size() - 1));
  }
  return a;
}

struct SourceAgg {
  Agg precision, recall, f1, auc;
  std::size_t folds_used = 0;

  nlohmann::json to_json() const {
    auto agg = [](const Agg& a) {
      return nlohmann::json{
          {"mean", a.mean}, {"stddev", a.stddev}, {"folds", a.values}};
    };
    return {{"precision", agg(precision)},
            {"recall", agg(recall)},
            {"f1", agg(f1)},
            {"auc", agg(auc)},
            {"folds_used", folds_used}};
  }
};

struct FoldOutcome {
  std::size_t fold = 0;
  bool skipped = false;
  std::string note;
  std::optional<Metrics> vs_weak;
  std::optional<Metrics> vs_gold;
};

struct CvReport {
  std::string model_name;
  std::string trained_on;  // weak | gold
  std::string variant;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<FoldOutcome> folds;
  std::optional<SourceAgg> weak_agg;
  std::optional<SourceAgg> gold_agg;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    nlohmann::json folds_json = nlohmann::json::array();
    for (const auto& f : folds) {
      nlohmann::json fj{{"fold", f.fold}, {"skipped", f.skipped}};
      if (!f.note.empty()) fj["note"] = f.note;
      if (f.vs_weak) fj["vs_weak"] = f.vs_weak->to_json();
      if (f.vs_gold) fj["vs_gold"] = f.vs_gold->to_json();
      folds_json.push_back(fj);
    }
    nlohmann::json j{{"model", model_name}, {"trained_on", trained_on},
                     {"variant", variant},  {"k", k},
                     {"seed", seed},        {"folds", folds_json},
                     {"warnings", warnings}};
    if (weak_agg) j["vs_weak"] = weak_agg->to_json();
    if (gold_agg) j["vs_gold"] = gold_agg->to_json();
    return j;
  }
};

namespace edetail {

inline std::optional<Metrics> subset_metrics(
    const std::vector<std::string>& ids, const std::vector<double>& probs,
    double threshold, const std::map<std::string, int>& truth,
    std::vector<std::string>* warnings, const std::string& tag) {
  std::vector<int> preds, labels;
  std::vector<double> scores;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = truth.find(ids[i]);
    if (it == truth.end()) continue;
    preds.push_back(probs[i] >= threshold ? 1 : 0);
    labels.push_back(it->second);
    scores.push_back(probs[i]);
  }
  if (labels.empty()) {
    if (warnings) warnings->push_back(tag + ": no labeled letters");
    return std::nullopt;
  }
  std::size_t pos = 0;
  for (int l : labels) pos += l;
  if (pos == 0) {
    if (warnings) warnings->push_back(tag + ": no positive labels");
    return std::nullopt;
  }
  Metrics m = prf1(preds, labels);
  if (pos < labels.size())
    m.auc = roc_auc(scores, labels);
  else if (warnings)
    warnings->push_back(tag + ": no negative labels, AUC omitted");
  return m;
}

inline SourceAgg aggregate_source(const std::vector<FoldOutcome>& folds,
                                  bool use_gold) {
  std::vector<double> p, r, f1, auc;
  for (const auto& f : folds) {
    const auto& m = use_gold ? f.vs_gold : f.vs_weak;
    if (!m) continue;
    p.push_back(m->precision);
    r.push_back(m->recall);
    f1.push_back(m->f1);
    if (m->auc) auc.push_back(*m->auc);
  }
  SourceAgg agg;
  agg.precision = aggregate(p);
  agg.recall = aggregate(r);
  agg.f1 = aggregate(f1);
  agg.auc = aggregate(auc);
  agg.folds_used = p.size();
  return agg;
}

}  // namespace edetail

/// K-fold cross-validation: per fold, train on the other folds with the
/// training labels and score the held-out fold against weak and gold labels.
/// Gold-trained runs omit the weak columns. Folds whose training labels
/// collapse to one class are skipped with a recorded warning.
inline CvReport run_cv(const FeatureSet& features,
                       const std::map<std::string, int>& train_labels,
                       const std::string& trained_on,
                       const std::map<std::string, int>& weak_labels,
                       const std::map<std::string, int>& gold_labels,
                       const FoldPlan& plan, const TrainConfig& cfg,
                       const std::string& model_name = "") {
  CvReport report;
  report.model_name = model_name.empty() ? trained_on + "-trained" : model_name;
  report.trained_on = trained_on;
  report.variant = to_string(features.variant);
  report.k = plan.k;
  report.seed = cfg.seed;

  const bool assess_weak = trained_on != "gold";

  for (std::size_t fold = 0; fold < plan.k; ++fold) {
    FoldOutcome outcome;
    outcome.fold = fold;

    std::map<std::string, int> fold_train;
    for (const auto& [id, label] : train_labels) {
      auto it = plan.assignment.find(id);
      if (it == plan.assignment.end() || it->second == fold) continue;
      fold_train[id] = label;
    }
    std::size_t pos = 0;
    for (const auto& [id, label] : fold_train) pos += label;
    if (fold_train.empty() || pos == 0 || pos == fold_train.size()) {
      outcome.skipped = true;
      outcome.note = "skipped: single-class training labels";
      report.warnings.push_back("fold " + std::to_string(fold) +
                                " skipped: single-class training labels");
      report.folds.push_back(std::move(outcome));
      continue;
    }

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, "fold-" + std::to_string(fold));
    ClassifierModel model = train_on_features(features, fold_train, fold_cfg,
                                              trained_on);

    std::vector<std::string> test_ids;
    std::vector<double> probs;
    for (const auto& id : features.letter_ids) {
      auto it = plan.assignment.find(id);
      if (it == plan.assignment.end() || it->second != fold) continue;
      test_ids.push_back(id);
      probs.push_back(predict_proba(model, features, id));
    }

    std::string tag = "fold " + std::to_string(fold);
    if (assess_weak)
      outcome.vs_weak = edetail::subset_metrics(test_ids, probs, model.threshold,
                                                weak_labels, &report.warnings,
                                                tag + " vs weak");
    outcome.vs_gold = edetail::subset_metrics(test_ids, probs, model.threshold,
                                              gold_labels, &report.warnings,
                                              tag + " vs gold");
    report.folds.push_back(std::move(outcome));
  }

  if (assess_weak) report.weak_agg = edetail::aggregate_source(report.folds, false);
  report.gold_agg = edetail::aggregate_source(report.folds, true);
  return report;
}

// ---------------------------------------------------------------------------
// Leave-one-group-out
// ---------------------------------------------------------------------------

struct LogoGroupReport {
  std::string group;
  std::size_t n_letters = 0;
  std::size_t positives = 0;
  std::optional<Metrics> vs_weak;
  std::optional<Metrics> vs_gold;
  std::vector<std::string> warnings;
};

struct LogoReport {
  std::string group_by;
  std::size_t min_positives = 15;
  std::vector<LogoGroupReport> groups;
  std::vector<std::string> excluded;  // "group (n positives)"

  nlohmann::json to_json() const {
    nlohmann::json groups_json = nlohmann::json::array();
    for (const auto& g : groups) {
      nlohmann::json gj{{"group", g.group},
                        {"n_letters", g.n_letters},
                        {"positives", g.positives},
                        {"warnings", g.warnings}};
      if (g.vs_weak) gj["vs_weak"] = g.vs_weak->to_json();
      if (g.vs_gold) gj["vs_gold"] = g.vs_gold->to_json();
      groups_json.push_back(gj);
    }
    return {{"group_by", group_by},
            {"min_positives", min_positives},
            {"groups", groups_json},
            {"excluded", excluded}};
  }
};

/// Train on all groups but one, evaluate on the held-out group. Groups below
/// min_positives (gold when available, else weak) and the UNKNOWN group are
/// never held out, though their letters still train.
inline LogoReport run_logo(const FeatureSet& features,
                           const std::map<std::string, int>& train_labels,
                           const std::string& trained_on,
                           const std::map<std::string, int>& weak_labels,
                           const std::map<std::string, int>& gold_labels,
                           const std::map<std::string, std::string>& group_of,
                           const std::string& group_by, std::size_t min_positives,
                           const TrainConfig& cfg) {
  LogoReport report;
  report.group_by = group_by;
  report.min_positives = min_positives;

  const std::map<std::string, int>& counting =
      gold_labels.empty() ? weak_labels : gold_labels;

  std::map<std::string, std::size_t> group_pos, group_n;
  for (const auto& id : features.letter_ids) {
    auto git = group_of.find(id);
    if (git == group_of.end()) continue;
    ++group_n[git->second];
    auto lit = counting.find(id);
    if (lit != counting.end() && lit->second) ++group_pos[git->second];
  }

  std::vector<std::string> retained;
  for (const auto& [group, n] : group_n) {
    std::size_t pos = group_pos.count(group) ? group_pos[group] : 0;
    if (group == "UNKNOWN" || pos < min_positives)
      report.excluded.push_back(group + " (" + std::to_string(pos) +
                                " positives)");
    else
      retained.push_back(group);
  }
  if (retained.size() < 2)
    throw std::runtime_error("run_logo: fewer than 2 groups with >= " +
                             std::to_string(min_positives) + " positives");

  for (const auto& group : retained) {
    LogoGroupReport gr;
    gr.group = group;
    gr.n_letters = group_n[group];
    gr.positives = group_pos.count(group) ? group_pos[group] : 0;

    std::map<std::string, int> fold_train;
    for (const auto& [id, label] : train_labels) {
      auto git = group_of.find(id);
      if (git != group_of.end() && git->second == group) continue;
      fold_train[id] = label;
    }
    TrainConfig group_cfg = cfg;
    group_cfg.seed = derive_seed(cfg.seed, "logo-" + group);
    ClassifierModel model =
        train_on_features(features, fold_train, group_cfg, trained_on);

    std::vector<std::string> test_ids;
    std::vector<double> probs;
    for (const auto& id : features.letter_ids) {
      auto git = group_of.find(id);
      if (git == group_of.end() || git->second != group) continue;
      test_ids.push_back(id);
      probs.push_back(predict_proba(model, features, id));
    }
    if (trained_on != "gold")
      gr.vs_weak = edetail::subset_metrics(test_ids, probs, model.threshold,
                                           weak_labels, &gr.warnings, "vs weak");
    gr.vs_gold = edetail::subset_metrics(test_ids, probs, model.threshold,
                                         gold_labels, &gr.warnings, "vs gold");
    report.groups.push_back(std::move(gr));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Pediatric / non-pediatric subgroups
// ---------------------------------------------------------------------------

struct SubgroupBlock {
  std::string name;
  std::vector<FoldOutcome> folds;
  std::optional<SourceAgg> weak_agg;
  std::optional<SourceAgg> gold_agg;
};

struct SubgroupReport {
  SubgroupBlock pediatric;
  SubgroupBlock non_pediatric;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    auto block = [](const SubgroupBlock& b) {
      nlohmann::json j{{"name", b.name}};
      if (b.weak_agg) j["vs_weak"] = b.weak_agg->to_json();
      if (b.gold_agg) j["vs_gold"] = b.gold_agg->to_json();
      return j;
    };
    return {{"pediatric", block(pediatric)},
            {"non_pediatric", block(non_pediatric)},
            {"warnings", warnings}};
  }
};

/// Same folds as run_cv, with the test fold split into pediatric and
/// non-pediatric letters and metrics computed per subgroup. Folds where a
/// subgroup is empty or single-class are flagged, not silently dropped.
inline SubgroupReport run_subgroup(const FeatureSet& features,
                                   const std::map<std::string, int>& train_labels,
                                   const std::string& trained_on,
                                   const std::map<std::string, int>& weak_labels,
                                   const std::map<std::string, int>& gold_labels,
                                   const std::map<std::string, bool>& pediatric,
                                   const FoldPlan& plan, const TrainConfig& cfg) {
  SubgroupReport report;
  report.pediatric.name = "pediatric";
  report.non_pediatric.name = "non_pediatric";
  const bool assess_weak = trained_on != "gold";

  for (std::size_t fold = 0; fold < plan.k; ++fold) {
    std::map<std::string, int> fold_train;
    for (const auto& [id, label] : train_labels) {
      auto it = plan.assignment.find(id);
      if (it == plan.assignment.end() || it->second == fold) continue;
      fold_train[id] = label;
    }
    std::size_t pos = 0;
    for (const auto& [id, label] : fold_train) pos += label;
    if (fold_train.empty() || pos == 0 || pos == fold_train.size()) {
      report.warnings.push_back("fold " + std::to_string(fold) +
                                " skipped: single-class training labels");
      continue;
    }
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, "fold-" + std::to_string(fold));
    ClassifierModel model =
        train_on_features(features, fold_train, fold_cfg, trained_on);

    for (bool ped : {true, false}) {
      std::vector<std::string> ids;
      std::vector<double> probs;
      for (const auto& id : features.letter_ids) {
        auto it = plan.assignment.find(id);
        if (it == plan.assignment.end() || it->second != fold) continue;
        auto pit = pediatric.find(id);
        bool is_ped = pit != pediatric.end() && pit->second;
        if (is_ped != ped) continue;
        ids.push_back(id);
        probs.push_back(predict_proba(model, features, id));
      }
      SubgroupBlock& block = ped ? report.pediatric : report.non_pediatric;
      FoldOutcome outcome;
      outcome.fold = fold;
      std::string tag = "fold " + std::to_string(fold) + " " + block.name;
      if (ids.empty()) {
        outcome.skipped = true;
        outcome.note = "empty subgroup";
        report.warnings.push_back(tag + ": empty subgroup");
      } else {
        if (assess_weak)
          outcome.vs_weak = edetail::subset_metrics(
              ids, probs, model.threshold, weak_labels, &report.warnings,
              tag + " vs weak");
        outcome.vs_gold = edetail::subset_metrics(ids, probs, model.threshold,
                                                  gold_labels, &report.warnings,
                                                  tag + " vs gold");
      }
      block.folds.push_back(std::move(outcome));
    }
  }

  for (SubgroupBlock* block : {&report.pediatric, &report.non_pediatric}) {
    if (assess_weak)
      block->weak_agg = edetail::aggregate_source(block->folds, false);
    block->gold_agg = edetail::aggregate_source(block->folds, true);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Text rendering
// ---------------------------------------------------------------------------

namespace edetail {

inline std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
  return buf;
}

inline std::string pct_pair(const Agg& a) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", a.mean * 100.0,
                a.stddev * 100.0);
  return buf;
}

}  // namespace edetail

/// One row of a results table: CV aggregates or single pooled metrics.
struct ResultRow {
  std::string name;
  std::optional<SourceAgg> weak_agg;
  std::optional<SourceAgg> gold_agg;
  std::optional<Metrics> weak_single;
  std::optional<Metrics> gold_single;
};

inline std::string render_results_table(const std::string& title,
                                        const std::vector<ResultRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"model", "P(W)", "R(W)", "F1(W)", "AUC(W)", "P(G)", "R(G)",
                   "F1(G)", "AUC(G)"});
  for (const auto& row : rows) {
    std::vector<std::string> c{row.name};
    auto push_agg = [&](const std::optional<SourceAgg>& agg) {
      if (!agg || agg->folds_used == 0) {
        c.insert(c.end(), {"-", "-", "-", "-"});
        return;
      }
      c.push_back(edetail::pct_pair(agg->precision));
      c.push_back(edetail::pct_pair(agg->recall));
      c.push_back(edetail::pct_pair(agg->f1));
      c.push_back(agg->auc.values.empty() ? "-" : edetail::pct_pair(agg->auc));
    };
    auto push_single = [&](const std::optional<Metrics>& m) {
      if (!m) {
        c.insert(c.end(), {"-", "-", "-", "-"});
        return;
      }
      c.push_back(edetail::pct(m->precision));
      c.push_back(edetail::pct(m->recall));
      c.push_back(edetail::pct(m->f1));
      c.push_back(m->auc ? edetail::pct(*m->auc) : "-");
    };
    if (row.weak_agg || row.gold_agg) {
      push_agg(row.weak_agg);
      push_agg(row.gold_agg);
    } else {
      push_single(row.weak_single);
      push_single(row.gold_single);
    }
    cells.push_back(std::move(c));
  }

  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i)
      width[i] = std::max(width[i], row[i].size());

  std::string out = title + "\n";
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += row[i];
      if (i + 1 < row.size())
        out.append(width[i] - row[i].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

}  // namespace weakdx
