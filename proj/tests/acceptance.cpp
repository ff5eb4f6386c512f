// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exit code = number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "weakdx/pipeline.hpp"

using namespace weakdx;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing file " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// --------------------------------------------------------------------------
// 1. F1 formula cross-check against fixed reference triples
// --------------------------------------------------------------------------

Outcome criterion_f1_formula() {
  const double triples[][3] = {
      {0.7018, 0.8705, 0.7770}, {0.6557, 0.6876, 0.6713},
      {0.7388, 0.8638, 0.7964}, {0.7461, 0.6742, 0.7083},
      {0.6554, 0.7916, 0.7169}, {0.6233, 0.6005, 0.6110},
  };
  double worst = 0.0;
  for (const auto& t : triples) {
    std::size_t tp = 100000, fp, fn;
    // build a confusion table that realizes (P, R) and run prf1 on it
    fp = static_cast<std::size_t>(tp / t[0] - tp + 0.5);
    fn = static_cast<std::size_t>(tp / t[1] - tp + 0.5);
    std::vector<int> preds, labels;
    preds.reserve(tp + fp + fn);
    for (std::size_t i = 0; i < tp; ++i) {
      preds.push_back(1);
      labels.push_back(1);
    }
    for (std::size_t i = 0; i < fp; ++i) {
      preds.push_back(1);
      labels.push_back(0);
    }
    for (std::size_t i = 0; i < fn; ++i) {
      preds.push_back(0);
      labels.push_back(1);
    }
    Metrics m = prf1(preds, labels);
    worst = std::max(worst, std::fabs(m.f1 - t[2]));
  }
  return {worst <= 0.005, "max |F1 - reference| = " + fmt(worst)};
}

// --------------------------------------------------------------------------
// 2. AUC equals brute-force pair counting exactly
// --------------------------------------------------------------------------

Outcome criterion_auc_oracle() {
  Rng rng(20202);
  for (int round = 0; round < 1000; ++round) {
    std::size_t n = 2 + rng.next_below(199);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool tie_heavy = round % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = tie_heavy ? static_cast<double>(rng.next_below(5)) / 4.0
                            : rng.next_double();
      labels[i] = static_cast<int>(rng.next_below(2));
    }
    labels[0] = 1;
    if (n > 1) labels[1] = 0;
    double got = roc_auc(scores, labels);
    double want = oracles::pair_counting_auc(scores, labels);
    if (got != want)
      return {false, "mismatch at round " + std::to_string(round) + ": " +
                         fmt(got, 12) + " vs " + fmt(want, 12)};
  }
  return {true, "1000 instances, exact equality (ties included)"};
}

// --------------------------------------------------------------------------
// 3. Mutual-reachability MST weight equals Kruskal exactly
// --------------------------------------------------------------------------

Outcome criterion_mst_oracle() {
  Rng rng(30303);
  for (int round = 0; round < 200; ++round) {
    std::size_t n = 2 + rng.next_below(49);
    std::vector<Point> pts;
    for (std::size_t i = 0; i < n; ++i)
      pts.push_back({rng.next_double() * 10, rng.next_double() * 10,
                     rng.next_double() * 10});
    if (round % 5 == 0 && n >= 3) pts[1] = pts[0];  // duplicates
    std::size_t k = 1 + rng.next_below(std::min<std::size_t>(n - 1, 6));
    auto core = core_distances(pts, k, Metric::euclidean);
    auto mst = mutual_reachability_mst(pts, core, Metric::euclidean);

    std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        if (a == b) continue;
        double s = 0.0;
        for (std::size_t d = 0; d < 3; ++d) {
          double diff = pts[a][d] - pts[b][d];
          s += diff * diff;
        }
        w[a][b] = std::max({core[a], core[b], std::sqrt(s)});
      }

    std::vector<double> weights;
    for (const auto& e : mst) weights.push_back(e.weight);
    std::sort(weights.begin(), weights.end());
    double total = 0.0;
    for (double x : weights) total += x;
    double want = oracles::kruskal_mst_weight(w);
    if (total != want)
      return {false, "round " + std::to_string(round) + ": " + fmt(total, 12) +
                         " vs " + fmt(want, 12)};
  }
  return {true, "200 instances, exact weight equality"};
}

// --------------------------------------------------------------------------
// 4. PCA eigenvalues match the cyclic-Jacobi oracle
// --------------------------------------------------------------------------

Outcome criterion_pca_oracle() {
  Rng rng(40404);
  double worst_rel = 0.0, worst_trace = 0.0;
  for (int round = 0; round < 100; ++round) {
    std::size_t n = 3 + rng.next_below(18);   // up to 20 samples
    std::size_t dim = 2 + rng.next_below(11); // up to 12 dims
    std::vector<EmbeddingVector> vecs(n);
    for (auto& v : vecs) {
      v.values.resize(dim);
      for (auto& x : v.values) x = rng.next_gaussian();
    }
    std::size_t k = std::min(dim, n - 1);
    PcaModel model = fit_pca(vecs, k);

    std::vector<double> mean(dim, 0.0);
    for (const auto& v : vecs)
      for (std::size_t j = 0; j < dim; ++j) mean[j] += v.values[j] / n;
    std::vector<std::vector<double>> cov(dim, std::vector<double>(dim, 0.0));
    for (const auto& v : vecs)
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b)
          cov[a][b] += (v.values[a] - mean[a]) * (v.values[b] - mean[b]) / (n - 1);

    auto eig = oracles::jacobi_eigenvalues(cov);
    double scale = std::max(1e-12, std::fabs(eig[0]));
    for (std::size_t i = 0; i < k; ++i)
      worst_rel = std::max(
          worst_rel, std::fabs(model.explained_variance[i] - eig[i]) / scale);

    double trace = 0.0, lambda_sum = 0.0;
    for (std::size_t i = 0; i < dim; ++i) trace += cov[i][i];
    for (double ev : eig) lambda_sum += ev;
    worst_trace = std::max(worst_trace,
                           std::fabs(lambda_sum - trace) / std::max(1.0, trace));
  }
  bool pass = worst_rel <= 1e-8 && worst_trace <= 1e-8;
  return {pass, "max rel eigenvalue err = " + fmt(worst_rel, 12) +
                    ", trace err = " + fmt(worst_trace, 12)};
}

// --------------------------------------------------------------------------
// 5. HDBSCAN recovers planted blobs
// --------------------------------------------------------------------------

Outcome criterion_hdbscan_recovery() {
  double worst_ari = 1.0, worst_noise = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 7919);
    std::vector<Point> pts;
    std::vector<int> truth;
    int blob = 0;
    for (const auto& center :
         {Point{0.0, 0.0, 0.0}, Point{15.0, 0.0, 0.0}, Point{0.0, 15.0, 0.0}}) {
      for (int i = 0; i < 50; ++i) {
        Point p(3);
        for (std::size_t d = 0; d < 3; ++d)
          p[d] = center[d] + rng.next_gaussian();  // sigma 1, separation 15
        pts.push_back(std::move(p));
        truth.push_back(blob);
      }
      ++blob;
    }
    HdbscanParams params;
    params.min_cluster_size = 5;
    ClusterAssignment assign = cluster(pts, params);
    double ari = oracles::adjusted_rand_index(assign.labels, truth);
    std::size_t noise = 0;
    for (int label : assign.labels) noise += label == -1 ? 1 : 0;
    double noise_rate = static_cast<double>(noise) / pts.size();
    worst_ari = std::min(worst_ari, ari);
    worst_noise = std::max(worst_noise, noise_rate);
  }
  bool pass = worst_ari >= 0.95 && worst_noise <= 0.05;
  return {pass, "min ARI = " + fmt(worst_ari) + ", max noise = " +
                    fmt(worst_noise) + " over 20 seeds"};
}

// --------------------------------------------------------------------------
// 6. Gradient check and separable toy accuracy
// --------------------------------------------------------------------------

Outcome criterion_gradient_check() {
  Rng rng(60606);
  const double h = 1e-5;
  double worst = 0.0;
  for (int round = 0; round < 50; ++round) {
    std::size_t dim = 2 + rng.next_below(8);
    std::size_t batch_n = 1 + rng.next_below(10);
    std::vector<EmbeddingVector> storage(batch_n);
    std::vector<TrainExample> batch;
    for (auto& v : storage) {
      v.values.resize(dim);
      for (auto& x : v.values) x = rng.next_gaussian();
    }
    for (std::size_t i = 0; i < batch_n; ++i)
      batch.push_back({&storage[i], static_cast<int>(rng.next_below(2)),
                       0.5 + rng.next_double()});
    std::vector<double> w(dim);
    for (auto& x : w) x = 0.5 * rng.next_gaussian();
    double b = 0.5 * rng.next_gaussian();

    std::vector<double> grad(dim, 0.0);
    double grad_b = 0.0;
    cdetail::batch_loss_grad(batch, w, b, &grad, &grad_b);
    for (std::size_t d = 0; d <= dim; ++d) {
      auto loss_at = [&](double delta) {
        std::vector<double> wp = w;
        double bp = b;
        if (d < dim) wp[d] += delta;
        else bp += delta;
        return cdetail::batch_loss_grad(batch, wp, bp, nullptr, nullptr);
      };
      double numeric = (loss_at(h) - loss_at(-h)) / (2 * h);
      double analytic = d < dim ? grad[d] : grad_b;
      double denom = std::max({1e-8, std::fabs(numeric), std::fabs(analytic)});
      worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
  }
  if (worst > 1e-4)
    return {false, "max relative gradient error = " + fmt(worst, 8)};

  // separable toy set reaches training accuracy 1.0
  std::vector<EmbeddingVector> storage;
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) {
    storage.push_back({{1.5 + 0.1 * i, 1.0}, false});
    labels.push_back(1);
    storage.push_back({{-1.5 - 0.1 * i, 1.0}, false});
    labels.push_back(0);
  }
  std::vector<const EmbeddingVector*> features;
  for (const auto& v : storage) features.push_back(&v);
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.weight_decay = 0.0;
  cfg.epochs = 200;
  cfg.batch_size = 20;
  cfg.class_weighting = ClassWeighting::none;
  ClassifierModel model = train_classifier(features, labels, cfg, "toy", "weak");
  for (std::size_t i = 0; i < storage.size(); ++i) {
    double p = sigmoid(model.margin(storage[i]));
    if ((p >= 0.5 ? 1 : 0) != labels[i])
      return {false, "toy set misclassified after training"};
  }
  return {true, "max relative gradient error = " + fmt(worst, 8) +
                    ", toy accuracy 1.0"};
}

// --------------------------------------------------------------------------
// Shared end-to-end pipeline run (criteria 7-12)
// --------------------------------------------------------------------------

PipelineConfig acceptance_config(const std::string& out_dir) {
  PipelineConfig cfg;
  SynthesisConfig synth;
  synth.n_letters = 2000;
  synth.target_prevalence = 0.03;
  synth.diagnosis_section_rate = 0.89;
  synth.noise_rate = 0.10;
  cfg.synth = synth;
  cfg.k_folds = 10;
  cfg.eval_ablation = true;
  cfg.eval_subgroup = false;
  // The exclusion analysis drops one selected first-level cluster at a time.
  cfg.selection_level = 1;
  cfg.seed = 7;
  cfg.output_dir = out_dir;
  return cfg;
}

Outcome criterion_weak_label_quality(Pipeline& pipeline, const fs::path& dir) {
  for (const char* stage :
       {"synth", "extract", "embed", "cluster", "keywords", "label"})
    pipeline.run_stage(stage);

  Corpus corpus = pipeline.load_letters();
  std::map<std::string, int> weak;
  {
    std::ifstream in(dir / "weak_labels.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto comma = line.find(',');
      weak[line.substr(0, comma)] = line[comma + 1] == '1' ? 1 : 0;
    }
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& letter : corpus.letters) {
    bool gold = letter.gold_label.value_or(false);
    bool w = weak.at(letter.id) == 1;
    tp += gold && w;
    fp += !gold && w;
    fn += gold && !w;
  }
  double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  double precision =
      tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  bool pass = recall >= 0.80 && precision >= 0.70;
  return {pass, "weak vs planted gold: recall = " + fmt(recall) +
                    " (>= 0.80), precision = " + fmt(precision) + " (>= 0.70)"};
}

Outcome criterion_classification(Pipeline& pipeline, const fs::path& dir,
                                 nlohmann::json& report_out) {
  pipeline.run_stage("train");
  pipeline.run_stage("evaluate");
  report_out = nlohmann::json::parse(slurp(dir / "report.json"));
  const auto& with = report_out.at("with_diagnosis");
  double weak_f1 = with.at("weak_trained").at("vs_gold").at("f1").at("mean");
  double weak_auc = with.at("weak_trained").at("vs_gold").at("auc").at("mean");
  double gold_f1 = with.at("gold_trained").at("vs_gold").at("f1").at("mean");
  bool pass = weak_f1 >= 0.75 && weak_auc >= 0.78 && (gold_f1 - weak_f1) <= 0.10;
  return {pass, "gold-label F1 = " + fmt(weak_f1) + " (>= 0.75), AUC = " +
                    fmt(weak_auc) + " (>= 0.78), gap to gold-trained = " +
                    fmt(gold_f1 - weak_f1) + " (<= 0.10)"};
}

Outcome criterion_ablation(const nlohmann::json& report) {
  double with_f1 =
      report.at("with_diagnosis").at("weak_trained").at("vs_gold").at("f1").at(
          "mean");
  double without_f1 = report.at("without_diagnosis")
                          .at("weak_trained")
                          .at("vs_gold")
                          .at("f1")
                          .at("mean");
  double delta = std::fabs(with_f1 - without_f1);
  return {delta <= 0.05, "|F1 with - without diagnosis| = " + fmt(delta) +
                             " (<= 0.05)"};
}

Outcome criterion_sensitivity(Pipeline& pipeline, const fs::path& dir) {
  pipeline.run_stage("sensitivity");
  nlohmann::json report = nlohmann::json::parse(slurp(dir / "sensitivity.json"));
  const auto& runs = report.at("runs");
  double baseline = 0.0;
  struct Run {
    int cluster;
    std::size_t coverage;
    double f1;
  };
  std::vector<Run> exclusions;
  for (const auto& run : runs) {
    double f1 = run.at("vs_gold").at("f1").at("mean");
    if (run.at("excluded_cluster").is_null()) {
      baseline = f1;
    } else {
      exclusions.push_back({run.at("excluded_cluster").get<int>(),
                            run.at("excluded_coverage").get<std::size_t>(), f1});
    }
  }
  if (exclusions.size() < 2) return {false, "fewer than 2 exclusion runs"};

  std::size_t biggest_drop = 0, biggest_cover = 0;
  for (std::size_t i = 1; i < exclusions.size(); ++i) {
    if (baseline - exclusions[i].f1 >
        baseline - exclusions[biggest_drop].f1)
      biggest_drop = i;
    if (exclusions[i].coverage > exclusions[biggest_cover].coverage)
      biggest_cover = i;
  }
  bool others_small = true;
  double worst_other = 0.0;
  for (std::size_t i = 0; i < exclusions.size(); ++i) {
    if (i == biggest_cover) continue;
    double delta = std::fabs(exclusions[i].f1 - baseline);
    worst_other = std::max(worst_other, delta);
    if (delta > 0.05) others_small = false;
  }
  bool pass = biggest_drop == biggest_cover && others_small;
  return {pass,
          "largest drop from cluster #" + std::to_string(exclusions[biggest_drop].cluster) +
              " (coverage " + std::to_string(exclusions[biggest_drop].coverage) +
              "), max |dF1| among others = " + fmt(worst_other) + " (<= 0.05)"};
}

Outcome criterion_determinism(const fs::path& dir_a) {
  // Two fresh full runs; dir_a only lends its parent directory.
  fs::path dir_b = dir_a.parent_path() / (dir_a.filename().string() + "_run1");
  fs::path dir_c = dir_a.parent_path() / (dir_a.filename().string() + "_run2");
  for (const auto& d : {dir_b, dir_c}) {
    fs::remove_all(d);
    Pipeline run(acceptance_config(d.string()));
    run.run_all();
  }
  std::vector<std::string> artifacts = {
      "corpus.jsonl",       "diagnoses.csv",       "extraction_summary.json",
      "string_index.csv",   "string_vectors.jsonl", "pca_model.json",
      "embed_summary.json", "assignments.csv",      "condensed_tree.csv",
      "clusters_level1.csv", "clusters_level2.csv", "weak_labels.csv",
      "selection.json",     "model.json",           "report.json",
      "report.txt",          "folds.csv",           "manifest.json"};
  for (const auto& name : artifacts)
    if (slurp(dir_b / name) != slurp(dir_c / name))
      return {false, name + " differs between runs"};
  return {true, std::to_string(artifacts.size()) +
                    " artifacts byte-identical across two runs"};
}

Outcome criterion_second_level(const fs::path& dir) {
  auto parse_csv = [](const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) rows.push_back(pdetail::csv_split(line));
    return rows;
  };
  auto level1 = parse_csv(dir / "clusters_level1.csv");
  auto level2 = parse_csv(dir / "clusters_level2.csv");
  if (level1.empty() || level2.empty()) return {false, "missing cluster reports"};

  std::size_t size1 = 0, size2 = 0;
  for (const auto& row : level1) size1 += std::stoull(row.at(2));
  std::map<int, int> seen;  // level-1 id -> times referenced by level 2
  for (const auto& row : level2) {
    size2 += std::stoull(row.at(2));
    std::string children = row.at(4);
    std::size_t start = 0;
    while (start < children.size()) {
      std::size_t bar = children.find('|', start);
      if (bar == std::string::npos) bar = children.size();
      ++seen[std::stoi(children.substr(start, bar - start))];
      start = bar + 1;
    }
  }
  bool all_once = seen.size() == level1.size();
  for (const auto& [id, count] : seen) all_once &= count == 1;

  bool pass = level2.size() < level1.size() && size1 == size2 && all_once;
  return {pass, std::to_string(level1.size()) + " level-1 -> " +
                    std::to_string(level2.size()) +
                    " level-2 clusters, member union " +
                    (size1 == size2 && all_once ? "preserved" : "broken")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
  };

  fs::path dir = fs::temp_directory_path() / "weakdx_acceptance";
  fs::remove_all(dir);
  PipelineConfig cfg = acceptance_config(dir.string());
  Pipeline pipeline(cfg);
  nlohmann::json eval_report;

  std::vector<Criterion> criteria = {
      {1, "F1 formula cross-check", criterion_f1_formula},
      {2, "AUC oracle equivalence", criterion_auc_oracle},
      {3, "MST oracle equivalence", criterion_mst_oracle},
      {4, "PCA oracle equivalence", criterion_pca_oracle},
      {5, "HDBSCAN blob recovery", criterion_hdbscan_recovery},
      {6, "classifier gradient check", criterion_gradient_check},
      {7, "end-to-end weak-label quality",
       [&] { return criterion_weak_label_quality(pipeline, dir); }},
      {8, "end-to-end classification",
       [&] { return criterion_classification(pipeline, dir, eval_report); }},
      {9, "diagnosis-removal ablation", [&] { return criterion_ablation(eval_report); }},
      {10, "cluster-exclusion sensitivity",
       [&] { return criterion_sensitivity(pipeline, dir); }},
      {11, "determinism of run_all", [&] { return criterion_determinism(dir); }},
      {12, "second-level compression", [&] { return criterion_second_level(dir); }},
  };

  int failures = 0;
  for (auto& criterion : criteria) {
    Timer timer;
    Outcome outcome;
    try {
      outcome = criterion.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    if (!outcome.pass) ++failures;
    std::printf("[%s] criterion %2d: %s — %s (%.1f s)\n",
                outcome.pass ? "PASS" : "FAIL", criterion.id,
                criterion.name.c_str(), outcome.detail.c_str(), timer.seconds());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n",
              static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures;
}
