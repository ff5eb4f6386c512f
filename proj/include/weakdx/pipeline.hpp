#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "weakdx/classify.hpp"
#include "weakdx/corpus.hpp"
#include "weakdx/embed.hpp"
#include "weakdx/eval.hpp"
#include "weakdx/extraction.hpp"
#include "weakdx/hdbscan.hpp"
#include "weakdx/keywords.hpp"
#include "weakdx/rng.hpp"
#include "weakdx/textnorm.hpp"
#include "weakdx/weaklabel.hpp"

namespace weakdx {

inline const char* tool_version() { return "weakdx 0.1.0"; }

// ---------------------------------------------------------------------------
// Small CSV helpers
// ---------------------------------------------------------------------------

namespace pdetail {

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // ignore
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string fmt_double(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace pdetail

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

/// Full pipeline configuration. Every defaulted value is materialized by
/// to_json() so saved configs and manifests carry no implicit defaults.
struct PipelineConfig {
  // inputs
  std::string corpus_path;                // ingest mode when non-empty
  std::optional<SynthesisConfig> synth;   // synth mode when present
  std::string rules_path;
  std::string abbreviations_path;
  std::string definitions_path;
  std::string output_dir = "out";

  // stage parameters
  EmbedderConfig embedder;
  std::string external_strings_path;  // provider external_file
  std::string external_letters_path;
  std::size_t pca_dim = 16;
  HdbscanParams hdbscan{5, 0, Metric::euclidean};
  HdbscanParams hdbscan_level2{2, 1, Metric::euclidean};
  KeywordParams keywords;
  int selection_level = 2;
  TrainConfig train;
  std::string train_labels = "weak";  // weak | gold
  std::size_t max_tokens = 512;
  ChunkMode chunk_mode = ChunkMode::truncate;

  // evaluation
  std::size_t k_folds = 10;
  bool eval_gold = true;
  bool eval_ablation = true;
  bool eval_subgroup = true;
  std::string logo_group_by;  // "", "hospital", "lhu"
  std::size_t logo_min_positives = 15;
  std::string rule_term;  // defaults to the first positive keyword

  std::uint64_t seed = 42;

  // resolved artifacts
  ExtractionRules rules = ExtractionRules::defaults();
  AbbreviationTable abbreviations = AbbreviationTable::defaults();
  std::vector<DiseaseDefinition> definitions = DiseaseDefinition::defaults();

  void validate() const {
    if (corpus_path.empty() && !synth)
      throw std::runtime_error(
          "config: either corpus_path or synth must be provided");
    if (synth) synth->validate();
    embedder.validate();
    if (pca_dim < 1) throw std::runtime_error("config: pca_dim must be >= 1");
    keywords.validate();
    train.validate();
    if (selection_level != 1 && selection_level != 2)
      throw std::runtime_error("config: selection_level must be 1 or 2");
    if (train_labels != "weak" && train_labels != "gold")
      throw std::runtime_error("config: train_labels must be weak or gold");
    if (k_folds < 2) throw std::runtime_error("config: k_folds must be >= 2");
    if (!logo_group_by.empty() && logo_group_by != "hospital" &&
        logo_group_by != "lhu")
      throw std::runtime_error("config: logo_group_by must be hospital or lhu");
    for (const auto& d : definitions) d.validate();
    if (!rules_path.empty() && !std::filesystem::exists(rules_path))
      throw std::runtime_error("config: rules file not found: " + rules_path);
    if (!abbreviations_path.empty() &&
        !std::filesystem::exists(abbreviations_path))
      throw std::runtime_error("config: abbreviations file not found: " +
                               abbreviations_path);
    if (!definitions_path.empty() && !std::filesystem::exists(definitions_path))
      throw std::runtime_error("config: definitions file not found: " +
                               definitions_path);
    if (!corpus_path.empty() && !std::filesystem::exists(corpus_path))
      throw std::runtime_error("config: corpus file not found: " + corpus_path);
  }

  std::string effective_rule_term() const {
    if (!rule_term.empty()) return rule_term;
    if (!definitions.empty() && !definitions.front().positive.empty())
      return definitions.front().positive.front();
    return "bronchiolite";
  }

  /// Materialized config snapshot. output_dir is deliberately omitted: the
  /// manifest lives inside it and artifact paths are relative, so moving the
  /// output tree does not change a single recorded byte.
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["corpus_path"] = corpus_path;
    if (synth) {
      nlohmann::json s{{"n_letters", synth->n_letters},
                       {"target_prevalence", synth->target_prevalence},
                       {"n_hospitals", synth->n_hospitals},
                       {"n_lhus", synth->n_lhus},
                       {"pediatric_fraction", synth->pediatric_fraction},
                       {"diagnosis_section_rate", synth->diagnosis_section_rate},
                       {"noise_rate", synth->noise_rate},
                       {"target_disease", synth->target_disease},
                       {"disease_templates", synth->disease_templates}};
      j["synth"] = s;
    }
    j["rules_path"] = rules_path;
    j["abbreviations_path"] = abbreviations_path;
    j["definitions_path"] = definitions_path;
    j["embedder"] = {{"provider", embedder.provider == EmbedderProvider::hashed_ngram
                                      ? "hashed_ngram"
                                      : "external_file"},
                     {"dim", embedder.dim},
                     {"char_ngram_range",
                      std::vector<std::size_t>{embedder.ngram_min, embedder.ngram_max}},
                     {"hash_seed", embedder.hash_seed}};
    j["external_strings_path"] = external_strings_path;
    j["external_letters_path"] = external_letters_path;
    j["pca_dim"] = pca_dim;
    auto hj = [](const HdbscanParams& h) {
      return nlohmann::json{
          {"min_cluster_size", h.min_cluster_size},
          {"min_samples", h.effective_min_samples()},
          {"metric", h.metric == Metric::euclidean ? "euclidean" : "cosine"}};
    };
    j["hdbscan"] = hj(hdbscan);
    j["hdbscan_level2"] = hj(hdbscan_level2);
    j["keywords"] = {{"max_keywords", keywords.max_keywords},
                     {"min_cluster_freq", keywords.min_cluster_freq},
                     {"ratio_threshold", keywords.ratio_threshold}};
    j["selection_level"] = selection_level;
    j["train"] = train.to_json();
    j["train_labels"] = train_labels;
    j["max_tokens"] = max_tokens;
    j["chunk_mode"] = chunk_mode == ChunkMode::truncate ? "truncate" : "chunk";
    j["eval"] = {{"k_folds", k_folds},
                 {"gold", eval_gold},
                 {"ablation", eval_ablation},
                 {"subgroup", eval_subgroup},
                 {"logo_group_by", logo_group_by},
                 {"logo_min_positives", logo_min_positives},
                 {"rule_term", effective_rule_term()}};
    j["seed"] = seed;
    j["rules"] = rules.to_json();
    j["definitions"] = DiseaseDefinition::list_to_json(definitions);
    nlohmann::json abbr = nlohmann::json::object();
    for (const auto& [key, expansion] : abbreviations.entries())
      abbr[key] = join_tokens(expansion);
    j["abbreviations"] = abbr;
    return j;
  }

  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    cfg.corpus_path = j.value("corpus_path", std::string());
    if (j.contains("synth") && !j.at("synth").is_null()) {
      SynthesisConfig s;
      const auto& sj = j.at("synth");
      s.n_letters = sj.value("n_letters", s.n_letters);
      s.target_prevalence = sj.value("target_prevalence", s.target_prevalence);
      s.n_hospitals = sj.value("n_hospitals", s.n_hospitals);
      s.n_lhus = sj.value("n_lhus", s.n_lhus);
      s.pediatric_fraction = sj.value("pediatric_fraction", s.pediatric_fraction);
      s.diagnosis_section_rate =
          sj.value("diagnosis_section_rate", s.diagnosis_section_rate);
      s.noise_rate = sj.value("noise_rate", s.noise_rate);
      s.target_disease = sj.value("target_disease", s.target_disease);
      if (sj.contains("disease_templates"))
        s.disease_templates =
            sj.at("disease_templates")
                .get<std::map<std::string, std::vector<std::string>>>();
      cfg.synth = std::move(s);
    }
    cfg.rules_path = j.value("rules_path", std::string());
    cfg.abbreviations_path = j.value("abbreviations_path", std::string());
    cfg.definitions_path = j.value("definitions_path", std::string());
    cfg.output_dir = j.value("output_dir", std::string("out"));
    if (j.contains("embedder")) {
      const auto& ej = j.at("embedder");
      std::string provider = ej.value("provider", "hashed_ngram");
      if (provider == "hashed_ngram")
        cfg.embedder.provider = EmbedderProvider::hashed_ngram;
      else if (provider == "external" || provider == "external_file")
        cfg.embedder.provider = EmbedderProvider::external_file;
      else
        throw std::runtime_error("config: unknown embedder provider " + provider);
      cfg.embedder.dim = ej.value("dim", cfg.embedder.dim);
      if (ej.contains("char_ngram_range")) {
        auto range = ej.at("char_ngram_range").get<std::vector<std::size_t>>();
        if (range.size() != 2)
          throw std::runtime_error("config: char_ngram_range needs two values");
        cfg.embedder.ngram_min = range[0];
        cfg.embedder.ngram_max = range[1];
      }
      cfg.embedder.hash_seed = ej.value("hash_seed", cfg.embedder.hash_seed);
    }
    cfg.external_strings_path = j.value("external_strings_path", std::string());
    cfg.external_letters_path = j.value("external_letters_path", std::string());
    cfg.pca_dim = j.value("pca_dim", cfg.pca_dim);
    auto parse_hdbscan = [&](const char* key, HdbscanParams& params) {
      if (!j.contains(key)) return;
      const auto& hj = j.at(key);
      params.min_cluster_size = hj.value("min_cluster_size", params.min_cluster_size);
      params.min_samples = hj.value("min_samples", params.min_samples);
      std::string metric = hj.value("metric", "euclidean");
      if (metric == "euclidean")
        params.metric = Metric::euclidean;
      else if (metric == "cosine" || metric == "cosine-distance")
        params.metric = Metric::cosine_distance;
      else
        throw std::runtime_error("config: unknown metric " + metric);
    };
    parse_hdbscan("hdbscan", cfg.hdbscan);
    parse_hdbscan("hdbscan_level2", cfg.hdbscan_level2);
    if (j.contains("keywords")) {
      const auto& kj = j.at("keywords");
      cfg.keywords.max_keywords = kj.value("max_keywords", cfg.keywords.max_keywords);
      cfg.keywords.min_cluster_freq =
          kj.value("min_cluster_freq", cfg.keywords.min_cluster_freq);
      cfg.keywords.ratio_threshold =
          kj.value("ratio_threshold", cfg.keywords.ratio_threshold);
    }
    cfg.selection_level = j.value("selection_level", cfg.selection_level);
    if (j.contains("train")) cfg.train = TrainConfig::from_json(j.at("train"));
    cfg.train_labels = j.value("train_labels", cfg.train_labels);
    cfg.max_tokens = j.value("max_tokens", cfg.max_tokens);
    std::string chunk = j.value("chunk_mode", "truncate");
    if (chunk == "truncate")
      cfg.chunk_mode = ChunkMode::truncate;
    else if (chunk == "chunk")
      cfg.chunk_mode = ChunkMode::chunk;
    else
      throw std::runtime_error("config: unknown chunk_mode " + chunk);
    if (j.contains("eval")) {
      const auto& ej = j.at("eval");
      cfg.k_folds = ej.value("k_folds", cfg.k_folds);
      cfg.eval_gold = ej.value("gold", cfg.eval_gold);
      cfg.eval_ablation = ej.value("ablation", cfg.eval_ablation);
      cfg.eval_subgroup = ej.value("subgroup", cfg.eval_subgroup);
      cfg.logo_group_by = ej.value("logo_group_by", cfg.logo_group_by);
      cfg.logo_min_positives =
          ej.value("logo_min_positives", cfg.logo_min_positives);
      cfg.rule_term = ej.value("rule_term", cfg.rule_term);
    }
    cfg.seed = j.value("seed", cfg.seed);

    if (j.contains("rules") && !j.at("rules").is_null())
      cfg.rules = ExtractionRules::from_json(j.at("rules"));
    if (j.contains("definitions") && !j.at("definitions").is_null())
      cfg.definitions = DiseaseDefinition::list_from_json(j.at("definitions"));
    if (j.contains("abbreviations") && !j.at("abbreviations").is_null())
      cfg.abbreviations = AbbreviationTable::from_json(j.at("abbreviations"));

    // Files referenced by path override inline artifacts.
    if (!cfg.rules_path.empty()) cfg.rules = ExtractionRules::from_file(cfg.rules_path);
    if (!cfg.abbreviations_path.empty())
      cfg.abbreviations = AbbreviationTable::from_file(cfg.abbreviations_path);
    if (!cfg.definitions_path.empty())
      cfg.definitions = DiseaseDefinition::list_from_file(cfg.definitions_path);
    return cfg;
  }

  static PipelineConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("config " + path + ": " + e.what());
    }
    PipelineConfig cfg = from_json(j);
    if (const char* env = std::getenv("PIPELINE_OUT"); env && *env)
      cfg.output_dir = env;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot checksum missing file " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    if (!in) break;
  }
  char hex[32];
  std::snprintf(hex, sizeof(hex), "fnv1a64:%016llx",
                static_cast<unsigned long long>(h));
  return hex;
}

/// Stage bookkeeping: config snapshot, per-stage input/output checksums, and
/// the tool version. Stages re-run iff an input checksum changed. Timings go
/// to run.log, never into the manifest, so repeated runs match byte for byte.
class RunManifest {
 public:
  RunManifest(std::filesystem::path dir, nlohmann::json config_snapshot)
      : path_(dir / "manifest.json") {
    doc_["tool_version"] = tool_version();
    doc_["config"] = std::move(config_snapshot);
    doc_["stages"] = nlohmann::json::object();
    if (std::filesystem::exists(path_)) {
      std::ifstream in(path_);
      nlohmann::json existing;
      try {
        in >> existing;
        if (existing.value("tool_version", "") == doc_["tool_version"] &&
            existing.contains("config") && existing["config"] == doc_["config"] &&
            existing.contains("stages"))
          doc_["stages"] = existing["stages"];
      } catch (...) {
        // unreadable manifest: start fresh
      }
    }
  }

  /// (stage, checksum) an earlier run recorded for an artifact it produced.
  std::optional<std::pair<std::string, std::string>> recorded_output(
      const std::string& artifact) const {
    for (const auto& [stage, entry] : doc_["stages"].items()) {
      const auto& outs = entry.value("outputs", nlohmann::json::object());
      if (outs.contains(artifact))
        return std::make_pair(stage, outs[artifact].get<std::string>());
    }
    return std::nullopt;
  }

  bool stage_cached(const std::string& stage,
                    const std::map<std::string, std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    const std::filesystem::path& dir) const {
    if (!doc_["stages"].contains(stage)) return false;
    const auto& entry = doc_["stages"][stage];
    nlohmann::json want(inputs);
    if (entry.value("inputs", nlohmann::json::object()) != want) return false;
    const auto& outs = entry.value("outputs", nlohmann::json::object());
    for (const auto& rel : outputs) {
      auto p = dir / rel;
      if (!std::filesystem::exists(p)) return false;
      if (!outs.contains(rel) || outs[rel] != file_checksum(p.string()))
        return false;
    }
    return true;
  }

  void record_stage(const std::string& stage,
                    const std::map<std::string, std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    const std::filesystem::path& dir) {
    nlohmann::json entry;
    entry["inputs"] = nlohmann::json(inputs);
    nlohmann::json outs = nlohmann::json::object();
    for (const auto& rel : outputs) outs[rel] = file_checksum((dir / rel).string());
    entry["outputs"] = outs;
    doc_["stages"][stage] = entry;
    save();
  }

  void save() const {
    std::ofstream out(path_, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest " + path_.string());
    out << doc_.dump(2) << '\n';
  }

  const nlohmann::json& doc() const { return doc_; }

 private:
  std::filesystem::path path_;
  nlohmann::json doc_;
};

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    dir_ = cfg_.output_dir;
    std::filesystem::create_directories(dir_);
    manifest_.emplace(dir_, cfg_.to_json());
  }

  const PipelineConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }

  static const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "synth",    "extract", "embed",    "cluster",    "keywords",
        "label",    "train",   "evaluate", "sensitivity"};
    return names;
  }

  /// Runs one stage, skipping the work when inputs and outputs are unchanged.
  /// Returns true when the stage executed, false when cached.
  bool run_stage(const std::string& stage) {
    if (stage == "synth") return exec("synth", {}, {"corpus.jsonl"}, [this] { do_synth(); });
    if (stage == "extract")
      return exec("extract", {corpus_file()},
                  {"diagnoses.csv", "extraction_summary.json"},
                  [this] { do_extract(); });
    if (stage == "embed")
      return exec("embed", {corpus_file(), "diagnoses.csv"},
                  {"string_index.csv", "string_vectors.jsonl", "pca_model.json",
                   "embed_summary.json"},
                  [this] { do_embed(); });
    if (stage == "cluster")
      return exec("cluster", {"string_index.csv", "string_vectors.jsonl"},
                  {"assignments.csv", "condensed_tree.csv"},
                  [this] { do_cluster(); });
    if (stage == "keywords")
      return exec("keywords",
                  {corpus_file(), "diagnoses.csv", "string_index.csv",
                   "assignments.csv"},
                  {"clusters_level1.csv", "clusters_level2.csv"},
                  [this] { do_keywords(); });
    if (stage == "label")
      return exec("label",
                  {corpus_file(), "diagnoses.csv", "string_index.csv",
                   "assignments.csv", "clusters_level1.csv", "clusters_level2.csv"},
                  {"weak_labels.csv", "selection.json"}, [this] { do_label(); });
    if (stage == "train")
      return exec("train", {corpus_file(), "diagnoses.csv", "weak_labels.csv"},
                  {"model.json"}, [this] { do_train(); });
    if (stage == "evaluate")
      return exec("evaluate", {corpus_file(), "diagnoses.csv", "weak_labels.csv"},
                  {"report.json", "report.txt", "folds.csv"},
                  [this] { do_evaluate(); });
    if (stage == "sensitivity")
      return exec("sensitivity",
                  {corpus_file(), "diagnoses.csv", "weak_labels.csv",
                   "selection.json"},
                  {"sensitivity.json", "sensitivity.txt"},
                  [this] { do_sensitivity(); });
    throw std::runtime_error("unknown stage: " + stage);
  }

  /// Runs every stage in order; sensitivity stays a separate command.
  void run_all() {
    if (cfg_.synth) run_stage("synth");
    for (const char* stage :
         {"extract", "embed", "cluster", "keywords", "label", "train", "evaluate"})
      run_stage(stage);
  }

  /// Per-letter probabilities with the trained model.
  void predict(const std::string& model_path, const std::string& out_csv,
               InputVariant variant) {
    ClassifierModel model = ClassifierModel::load(
        model_path.empty() ? (dir_ / "model.json").string() : model_path);
    Corpus corpus = load_letters();
    ExtractionOutput extraction = extract_all(corpus, cfg_.rules);
    FeatureSet features = build_features_for(corpus, extraction, variant);
    std::ofstream out(out_csv.empty() ? (dir_ / "predictions.csv").string()
                                      : out_csv,
                      std::ios::binary);
    if (!out) throw std::runtime_error("cannot write predictions file");
    out << "letter_id,probability,predicted\n";
    for (const auto& id : features.letter_ids) {
      double p = predict_proba(model, features, id);
      out << pdetail::csv_escape(id) << ',' << pdetail::fmt_double(p) << ','
          << (p >= model.threshold ? 1 : 0) << '\n';
    }
  }

  // Exposed for tests and the sensitivity analysis.
  Corpus load_letters() const {
    if (cfg_.synth && cfg_.corpus_path.empty())
      return load_corpus((dir_ / "corpus.jsonl").string());
    return load_corpus(cfg_.corpus_path);
  }

 private:
  std::string corpus_file() const {
    return cfg_.synth && cfg_.corpus_path.empty()
               ? "corpus.jsonl"
               : cfg_.corpus_path;  // external path used as-is
  }

  std::filesystem::path artifact(const std::string& rel) const {
    std::filesystem::path p(rel);
    return p.is_absolute() ? p : dir_ / p;
  }

  void log_line(const std::string& line) {
    std::ofstream log(dir_ / "run.log", std::ios::app);
    log << line << '\n';
  }

  bool exec(const std::string& stage, const std::vector<std::string>& input_files,
            const std::vector<std::string>& output_files,
            const std::function<void()>& body) {
    std::map<std::string, std::string> inputs;
    for (const auto& rel : input_files) {
      auto p = artifact(rel);
      if (!std::filesystem::exists(p)) {
        std::string producer = producing_stage(rel);
        throw std::runtime_error("stage " + stage + ": missing artifact " + rel +
                                 (producer.empty()
                                      ? ""
                                      : " (run stage " + producer + " first)"));
      }
      std::string checksum = file_checksum(p.string());
      // Pipeline-produced inputs must still match what their stage recorded.
      if (auto produced = manifest_->recorded_output(rel);
          produced && produced->second != checksum)
        throw std::runtime_error("stage " + stage + ": stale artifact " + rel +
                                 " (checksum changed since stage " +
                                 produced->first + " produced it; re-run stage " +
                                 produced->first + ")");
      inputs[rel] = checksum;
    }
    if (manifest_->stage_cached(stage, inputs, output_files, dir_)) {
      log_line("stage " + stage + ": cached");
      return false;
    }
    auto start = std::chrono::steady_clock::now();
    body();
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - start)
                       .count();
    manifest_->record_stage(stage, inputs, output_files, dir_);
    log_line("stage " + stage + ": ok (" + std::to_string(elapsed) + " ms)");
    return true;
  }

  std::string producing_stage(const std::string& artifact_name) const {
    static const std::map<std::string, std::string> producers = {
        {"corpus.jsonl", "synth"},
        {"diagnoses.csv", "extract"},
        {"extraction_summary.json", "extract"},
        {"string_index.csv", "embed"},
        {"string_vectors.jsonl", "embed"},
        {"pca_model.json", "embed"},
        {"embed_summary.json", "embed"},
        {"assignments.csv", "cluster"},
        {"condensed_tree.csv", "cluster"},
        {"clusters_level1.csv", "keywords"},
        {"clusters_level2.csv", "keywords"},
        {"weak_labels.csv", "label"},
        {"selection.json", "label"},
        {"model.json", "train"}};
    auto it = producers.find(artifact_name);
    return it == producers.end() ? std::string() : it->second;
  }

  // --- stage bodies -------------------------------------------------------

  void do_synth() {
    if (!cfg_.synth)
      throw std::runtime_error("stage synth: no synth configuration present");
    Corpus corpus = generate_synthetic(*cfg_.synth, cfg_.seed);
    save_corpus(corpus, (dir_ / "corpus.jsonl").string());
  }

  void do_extract() {
    Corpus corpus = load_letters();
    ExtractionOutput extraction = extract_all(corpus, cfg_.rules);
    std::ofstream out(dir_ / "diagnoses.csv", std::ios::binary);
    out << "letter_id,string_id,span_start,span_end,raw,trimmed\n";
    auto index = string_index(extraction);
    for (const auto& ds : extraction.strings) {
      out << pdetail::csv_escape(ds.letter_id) << ',' << index.at(ds.trimmed)
          << ',' << ds.span_start << ',' << ds.span_end << ','
          << pdetail::csv_escape(ds.raw) << ',' << pdetail::csv_escape(ds.trimmed)
          << '\n';
    }
    nlohmann::json summary{{"letters", corpus.size()},
                           {"extracted", extraction.strings.size()},
                           {"coverage", extraction.coverage},
                           {"unique_trimmed", extraction.unique_trimmed}};
    std::ofstream sum(dir_ / "extraction_summary.json", std::ios::binary);
    sum << summary.dump(2) << '\n';
  }

  // Unique trimmed strings in first-occurrence order.
  static std::map<std::string, std::string> string_index(
      const ExtractionOutput& extraction) {
    std::map<std::string, std::string> index;
    std::size_t next = 0;
    for (const auto& ds : extraction.strings) {
      if (index.count(ds.trimmed)) continue;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "u%06zu", ++next);
      index.emplace(ds.trimmed, buf);
    }
    return index;
  }

  struct StringTable {
    std::vector<std::string> ids;      // uNNNNNN in first-occurrence order
    std::vector<std::string> trimmed;  // parallel
    std::vector<std::size_t> letters;  // letters per unique string
  };

  StringTable read_string_index() const {
    StringTable table;
    std::ifstream in(dir_ / "string_index.csv");
    if (!in) throw std::runtime_error("cannot open string_index.csv");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto fields = pdetail::csv_split(line);
      table.ids.push_back(fields.at(0));
      table.trimmed.push_back(fields.at(1));
      table.letters.push_back(std::stoull(fields.at(2)));
    }
    return table;
  }

  void do_embed() {
    Corpus corpus = load_letters();
    ExtractionOutput extraction = extract_all(corpus, cfg_.rules);
    auto index = string_index(extraction);

    // first-occurrence order
    std::vector<std::pair<std::string, std::string>> ordered;  // (uid, trimmed)
    {
      std::set<std::string> seen;
      std::map<std::string, std::size_t> letter_count;
      for (const auto& ds : extraction.strings) ++letter_count[ds.trimmed];
      for (const auto& ds : extraction.strings)
        if (seen.insert(ds.trimmed).second)
          ordered.emplace_back(index.at(ds.trimmed), ds.trimmed);

      std::ofstream sidx(dir_ / "string_index.csv", std::ios::binary);
      sidx << "string_id,trimmed,n_letters\n";
      for (const auto& [uid, trimmed] : ordered)
        sidx << uid << ',' << pdetail::csv_escape(trimmed) << ','
             << letter_count[trimmed] << '\n';
    }

    std::vector<EmbeddingVector> vectors(ordered.size());
    if (cfg_.embedder.provider == EmbedderProvider::hashed_ngram) {
      for (std::size_t i = 0; i < ordered.size(); ++i)
        vectors[i] =
            embed_text(normalize(ordered[i].second, cfg_.abbreviations), cfg_.embedder);
    } else {
      if (cfg_.external_strings_path.empty())
        throw std::runtime_error(
            "embed: external provider needs external_strings_path");
      std::vector<std::string> uids;
      for (const auto& [uid, trimmed] : ordered) uids.push_back(uid);
      auto loaded = load_external_embeddings(cfg_.external_strings_path, uids);
      for (std::size_t i = 0; i < uids.size(); ++i) vectors[i] = loaded.at(uids[i]);
    }

    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < vectors.size(); ++i)
      if (!vectors[i].degenerate) usable.push_back(i);
    if (usable.size() < 2)
      throw std::runtime_error("embed: need at least 2 non-degenerate strings");

    std::vector<EmbeddingVector> fit_input;
    fit_input.reserve(usable.size());
    for (std::size_t i : usable) fit_input.push_back(vectors[i]);
    std::size_t k =
        std::min({cfg_.pca_dim, cfg_.embedder.dim, usable.size() - 1});
    PcaModel pca = fit_pca(fit_input, std::max<std::size_t>(1, k));

    std::ofstream vout(dir_ / "string_vectors.jsonl", std::ios::binary);
    std::vector<std::string> degenerate_ids;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      nlohmann::json j;
      j["id"] = ordered[i].first;
      if (vectors[i].degenerate) {
        j["degenerate"] = true;
        j["vector"] = std::vector<double>();
        degenerate_ids.push_back(ordered[i].first);
      } else {
        j["vector"] = project_pca(pca, vectors[i]);
      }
      vout << j.dump() << '\n';
    }
    std::ofstream pout(dir_ / "pca_model.json", std::ios::binary);
    pout << pca.to_json().dump() << '\n';
    nlohmann::json summary{{"pca_dim_used", pca.k},
                           {"unique_strings", ordered.size()},
                           {"degenerate", degenerate_ids}};
    std::ofstream sout(dir_ / "embed_summary.json", std::ios::binary);
    sout << summary.dump(2) << '\n';
  }

  struct ReducedVectors {
    std::vector<std::string> uids;
    std::vector<Point> points;
    std::vector<bool> degenerate;
  };

  ReducedVectors read_reduced_vectors() const {
    ReducedVectors rv;
    std::ifstream in(dir_ / "string_vectors.jsonl");
    if (!in) throw std::runtime_error("cannot open string_vectors.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      rv.uids.push_back(j.at("id").get<std::string>());
      rv.points.push_back(j.at("vector").get<std::vector<double>>());
      rv.degenerate.push_back(j.value("degenerate", false));
    }
    return rv;
  }

  void do_cluster() {
    ReducedVectors rv = read_reduced_vectors();
    std::vector<Point> points;
    std::vector<std::size_t> point_to_row;
    for (std::size_t i = 0; i < rv.points.size(); ++i) {
      if (rv.degenerate[i]) continue;
      points.push_back(rv.points[i]);
      point_to_row.push_back(i);
    }
    if (points.size() < 2)
      throw std::runtime_error("cluster: need at least 2 clusterable strings");

    HdbscanParams params = cfg_.hdbscan;
    std::size_t requested = params.effective_min_samples();
    params.min_samples = std::min(requested, points.size() - 1);
    if (params.min_samples != requested)
      log_line("cluster: min_samples clamped to " +
               std::to_string(params.min_samples) + " (only " +
               std::to_string(points.size()) + " clusterable strings)");
    CondensedTree tree;
    ClusterAssignment assign = cluster_with_tree(points, params, tree);

    std::ofstream out(dir_ / "assignments.csv", std::ios::binary);
    out << "string_id,cluster_id,probability\n";
    std::vector<int> labels_by_row(rv.points.size(), -1);
    std::vector<double> probs_by_row(rv.points.size(), 0.0);
    for (std::size_t p = 0; p < points.size(); ++p) {
      labels_by_row[point_to_row[p]] = assign.labels[p];
      probs_by_row[point_to_row[p]] = assign.probabilities[p];
    }
    for (std::size_t i = 0; i < rv.uids.size(); ++i)
      out << rv.uids[i] << ',' << labels_by_row[i] << ','
          << pdetail::fmt_double(probs_by_row[i]) << '\n';

    std::ofstream tout(dir_ / "condensed_tree.csv", std::ios::binary);
    tout << "parent,child,lambda,size\n";
    for (const auto& e : tree.edges)
      tout << e.parent << ',' << e.child << ',' << pdetail::fmt_double(e.lambda)
           << ',' << e.child_size << '\n';
  }

  struct Assignments {
    std::unordered_map<std::string, int> cluster_of_uid;  // -1 noise
    std::size_t n_clusters = 0;
  };

  Assignments read_assignments() const {
    Assignments a;
    std::ifstream in(dir_ / "assignments.csv");
    if (!in) throw std::runtime_error("cannot open assignments.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto fields = pdetail::csv_split(line);
      int label = std::stoi(fields.at(1));
      a.cluster_of_uid[fields.at(0)] = label;
      if (label >= 0)
        a.n_clusters = std::max(a.n_clusters, static_cast<std::size_t>(label) + 1);
    }
    return a;
  }

  struct ClusterArtifacts {
    std::vector<ClusterSummary> level1;
    std::vector<ClusterSummary> level2;
    std::unordered_map<std::string, TokenList> tokens_by_uid;
    CorpusTokenStats stats;
  };

  ClusterArtifacts build_cluster_artifacts() const {
    ClusterArtifacts art;
    StringTable table = read_string_index();
    Assignments assign = read_assignments();

    std::vector<TokenList> docs(table.ids.size());
    for (std::size_t i = 0; i < table.ids.size(); ++i) {
      docs[i] = normalize(table.trimmed[i], cfg_.abbreviations);
      art.tokens_by_uid[table.ids[i]] = docs[i];
    }
    art.stats = CorpusTokenStats::from_documents(docs);

    ClusterAssignment ca;
    ca.n_clusters = assign.n_clusters;
    ca.labels.resize(table.ids.size());
    ca.probabilities.assign(table.ids.size(), 0.0);
    for (std::size_t i = 0; i < table.ids.size(); ++i)
      ca.labels[i] = assign.cluster_of_uid.at(table.ids[i]);

    art.level1 =
        build_level1_summaries(ca, table.ids, docs, art.stats, cfg_.keywords);
    if (art.level1.size() >= 2) {
      SecondLevelConfig cfg2;
      cfg2.embedder = cfg_.embedder;
      if (cfg2.embedder.provider == EmbedderProvider::external_file)
        cfg2.embedder.provider = EmbedderProvider::hashed_ngram;
      cfg2.pca_dim = cfg_.pca_dim;
      cfg2.hdbscan = cfg_.hdbscan_level2;
      cfg2.keywords = cfg_.keywords;
      art.level2 =
          second_level_merge(art.level1, art.tokens_by_uid, art.stats, cfg2);
    } else {
      // Degenerate: carry level 1 through unchanged.
      for (const auto& s : art.level1) {
        ClusterSummary copy = s;
        copy.level = 2;
        copy.children = {s.cluster_id};
        art.level2.push_back(std::move(copy));
      }
    }
    return art;
  }

  void write_cluster_csv(const std::filesystem::path& path,
                         const std::vector<ClusterSummary>& summaries) const {
    std::ofstream out(path, std::ios::binary);
    out << "level,cluster_id,size,keywords,children\n";
    for (const auto& s : summaries) {
      std::string children;
      for (std::size_t i = 0; i < s.children.size(); ++i) {
        if (i) children += '|';
        children += std::to_string(s.children[i]);
      }
      out << s.level << ',' << s.cluster_id << ',' << s.size << ','
          << pdetail::csv_escape(s.keyword_string()) << ','
          << pdetail::csv_escape(children) << '\n';
    }
  }

  void do_keywords() {
    ClusterArtifacts art = build_cluster_artifacts();
    write_cluster_csv(dir_ / "clusters_level1.csv", art.level1);
    write_cluster_csv(dir_ / "clusters_level2.csv", art.level2);
  }

  void do_label() {
    Corpus corpus = load_letters();
    ExtractionOutput extraction = extract_all(corpus, cfg_.rules);
    ClusterArtifacts art = build_cluster_artifacts();
    Assignments assign = read_assignments();

    const auto& summaries =
        cfg_.selection_level == 2 ? art.level2 : art.level1;
    ClusterSelection selection = select_clusters(summaries, cfg_.definitions);

    // cluster id of each trimmed string at the selection level
    std::unordered_map<std::string, int> cluster_of_trimmed;
    StringTable table = read_string_index();
    std::unordered_map<int, int> level2_of_level1;
    if (cfg_.selection_level == 2)
      for (const auto& s : art.level2)
        for (int child : s.children) level2_of_level1[child] = s.cluster_id;
    for (std::size_t i = 0; i < table.ids.size(); ++i) {
      int l1 = assign.cluster_of_uid.at(table.ids[i]);
      int cluster = l1;
      if (cfg_.selection_level == 2 && l1 >= 0) cluster = level2_of_level1.at(l1);
      cluster_of_trimmed[table.trimmed[i]] = cluster;
    }

    WeakLabelSet weak = assign_weak_labels(corpus, extraction, cluster_of_trimmed,
                                           selection, cfg_.definitions);
    if (selection.selected.empty())
      log_line("label: warning: no cluster selected, weak labels are all zero");

    std::ofstream out(dir_ / "weak_labels.csv", std::ios::binary);
    out << "letter_id,weak_label,cluster_id,fired_definition\n";
    for (const auto& letter : corpus.letters) {
      int label = weak.labels.at(letter.id);
      auto cit = weak.letter_cluster.find(letter.id);
      std::string cluster = cit == weak.letter_cluster.end()
                                ? std::string()
                                : std::to_string(cit->second);
      std::string fired;
      if (label == 1) {
        auto fit = selection.fired_definition.find(cit->second);
        if (fit != selection.fired_definition.end())
          fired = std::to_string(fit->second);
      }
      out << pdetail::csv_escape(letter.id) << ',' << label << ',' << cluster
          << ',' << fired << '\n';
    }

    nlohmann::json sel;
    sel["level"] = selection.level;
    sel["selected"] = selection.selected;
    nlohmann::json fired = nlohmann::json::object();
    for (const auto& [cluster, def] : selection.fired_definition)
      fired[std::to_string(cluster)] = def;
    sel["fired_definition"] = fired;
    sel["definitions"] = DiseaseDefinition::list_to_json(cfg_.definitions);
    std::ofstream sout(dir_ / "selection.json", std::ios::binary);
    sout << sel.dump(2) << '\n';
  }

  std::map<std::string, int> read_weak_labels() const {
    std::map<std::string, int> labels;
    std::ifstream in(dir_ / "weak_labels.csv");
    if (!in) throw std::runtime_error("cannot open weak_labels.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto fields = pdetail::csv_split(line);
      labels[fields.at(0)] = std::stoi(fields.at(1));
    }
    return labels;
  }

  std::map<std::string, int> read_letter_clusters() const {
    std::map<std::string, int> clusters;
    std::ifstream in(dir_ / "weak_labels.csv");
    if (!in) throw std::runtime_error("cannot open weak_labels.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto fields = pdetail::csv_split(line);
      if (!fields.at(2).empty()) clusters[fields.at(0)] = std::stoi(fields.at(2));
    }
    return clusters;
  }

  FeatureSet build_features_for(const Corpus& corpus,
                                const ExtractionOutput& extraction,
                                InputVariant variant) const {
    if (cfg_.embedder.provider == EmbedderProvider::external_file) {
      if (cfg_.external_letters_path.empty())
        throw std::runtime_error(
            "features: external provider needs external_letters_path");
      std::map<std::string, EmbeddingVector> by_id;
      std::vector<std::string> ids;
      for (const auto& l : corpus.letters) ids.push_back(l.id);
      auto loaded = load_external_embeddings(cfg_.external_letters_path, ids);
      for (auto& [id, vec] : loaded) by_id.emplace(id, std::move(vec));
      return build_features_external(corpus, by_id);
    }
    return build_features(corpus, extraction, variant, cfg_.embedder,
                          cfg_.max_tokens, cfg_.chunk_mode);
  }

  static std::map<std::string, int> gold_labels_of(const Corpus& corpus) {
    std::map<std::string, int> gold;
    for (const auto& l : corpus.letters)
      if (l.gold_label) gold[l.id] = *l.gold_label ? 1 : 0;
    return gold;
  }

  void do_train() {
    Corpus corpus = load_letters();
    ExtractionOutput extraction = extract_all(corpus, cfg_.rules);
    std::map<std::string, int> labels = cfg_.train_labels == "gold"
                                            ? gold_labels_of(corpus)
                                            : read_weak_labels();
    if (labels.empty())
      throw std::runtime_error("train: no " + cfg_.train_labels + " labels");
    FeatureSet features =
        build_features_for(corpus, extraction, InputVariant::with_diagnosis);
    TrainConfig cfg = cfg_.train;
    cfg.seed = derive_seed(cfg_.seed, "train");
    ClassifierModel model =
        train_on_features(features, labels, cfg, cfg_.train_labels);
    model.save((dir_ / "model.json").string());
  }

  struct EvalContext {
    Corpus corpus;
    ExtractionOutput extraction;
    std::map<std::string, int> weak;
    std::map<std::string, int> gold;
    FoldPlan plan;
  };

  EvalContext make_eval_context() const {
    EvalContext ctx;
    ctx.corpus = load_letters();
    ctx.extraction = extract_all(ctx.corpus, cfg_.rules);
    ctx.weak = read_weak_labels();
    ctx.gold = gold_labels_of(ctx.corpus);

    const std::map<std::string, int>& strat = ctx.gold.empty() ? ctx.weak : ctx.gold;
    std::vector<std::pair<std::string, int>> labeled;
    for (const auto& letter : ctx.corpus.letters) {
      auto it = strat.find(letter.id);
      labeled.emplace_back(letter.id, it == strat.end() ? 0 : it->second);
    }
    ctx.plan = stratified_folds(labeled, cfg_.k_folds, derive_seed(cfg_.seed, "folds"),
                                ctx.gold.empty() ? "weak" : "gold");
    return ctx;
  }

  Metrics pooled_rule_metrics(const EvalContext& ctx, RuleScope scope,
                              const std::map<std::string, int>& truth) const {
    std::vector<int> preds, labels;
    for (const auto& letter : ctx.corpus.letters) {
      auto it = truth.find(letter.id);
      if (it == truth.end()) continue;
      std::string stripped = strip_boilerplate(letter.text);
      const DiagnosisString* diag = ctx.extraction.for_letter(letter.id);
      preds.push_back(rule_classify(stripped, diag, scope,
                                    cfg_.effective_rule_term())
                          ? 1
                          : 0);
      labels.push_back(it->second);
    }
    return prf1(preds, labels);
  }

  void do_evaluate() {
    EvalContext ctx = make_eval_context();
    TrainConfig cv_cfg = cfg_.train;
    cv_cfg.seed = derive_seed(cfg_.seed, "cv");

    nlohmann::json report;
    report["settings"] = {{"k_folds", cfg_.k_folds},
                          {"seed", cfg_.seed},
                          {"stratified_on", ctx.plan.stratify_on},
                          {"embedder", cfg_.embedder.fingerprint()},
                          {"pca_dim", cfg_.pca_dim},
                          {"selection_level", cfg_.selection_level},
                          {"threshold", 0.5},
                          {"std_dev", "sample std over folds"},
                          {"rule_term", cfg_.effective_rule_term()},
                          {"tool_version", tool_version()}};
    std::string text;
    std::ofstream folds_csv(dir_ / "folds.csv", std::ios::binary);
    folds_csv << "variant,model,fold,source,precision,recall,f1,auc\n";

    std::vector<InputVariant> variants{InputVariant::with_diagnosis};
    if (cfg_.eval_ablation) variants.push_back(InputVariant::without_diagnosis);

    for (InputVariant variant : variants) {
      FeatureSet features = build_features_for(ctx.corpus, ctx.extraction, variant);
      std::vector<ResultRow> rows;
      nlohmann::json block;

      CvReport weak_cv = run_cv(features, ctx.weak, "weak", ctx.weak, ctx.gold,
                                ctx.plan, cv_cfg, "weak-trained");
      block["weak_trained"] = weak_cv.to_json();
      rows.push_back({"weak-trained", weak_cv.weak_agg, weak_cv.gold_agg,
                      std::nullopt, std::nullopt});
      append_folds_csv(folds_csv, to_string(variant), weak_cv);

      if (cfg_.eval_gold && !ctx.gold.empty()) {
        CvReport gold_cv = run_cv(features, ctx.gold, "gold", ctx.weak, ctx.gold,
                                  ctx.plan, cv_cfg, "gold-trained");
        block["gold_trained"] = gold_cv.to_json();
        rows.push_back({"gold-trained", std::nullopt, gold_cv.gold_agg,
                        std::nullopt, std::nullopt});
        append_folds_csv(folds_csv, to_string(variant), gold_cv);
      }

      // Rule baselines: deterministic, reported pooled over the corpus.
      {
        std::optional<Metrics> full_weak, full_gold;
        if (!ctx.weak.empty())
          full_weak = pooled_rule_metrics(ctx, RuleScope::full_text, ctx.weak);
        if (!ctx.gold.empty())
          full_gold = pooled_rule_metrics(ctx, RuleScope::full_text, ctx.gold);
        rows.push_back(
            {"rule-full-text", std::nullopt, std::nullopt, full_weak, full_gold});
        nlohmann::json rj;
        if (full_weak) rj["vs_weak"] = full_weak->to_json();
        if (full_gold) rj["vs_gold"] = full_gold->to_json();
        block["rule_full_text"] = rj;

        if (variant == InputVariant::with_diagnosis) {
          std::optional<Metrics> diag_weak, diag_gold;
          if (!ctx.weak.empty())
            diag_weak =
                pooled_rule_metrics(ctx, RuleScope::diagnosis_only, ctx.weak);
          if (!ctx.gold.empty())
            diag_gold =
                pooled_rule_metrics(ctx, RuleScope::diagnosis_only, ctx.gold);
          rows.push_back({"rule-diagnosis", std::nullopt, std::nullopt, diag_weak,
                          diag_gold});
          nlohmann::json dj;
          if (diag_weak) dj["vs_weak"] = diag_weak->to_json();
          if (diag_gold) dj["vs_gold"] = diag_gold->to_json();
          block["rule_diagnosis"] = dj;
        }
      }

      if (cfg_.eval_subgroup && variant == InputVariant::with_diagnosis) {
        std::map<std::string, bool> pediatric;
        for (const auto& l : ctx.corpus.letters) pediatric[l.id] = l.is_pediatric;
        SubgroupReport sub = run_subgroup(features, ctx.weak, "weak", ctx.weak,
                                          ctx.gold, pediatric, ctx.plan, cv_cfg);
        block["subgroup"] = sub.to_json();
        std::vector<ResultRow> sub_rows{
            {"pediatric", sub.pediatric.weak_agg, sub.pediatric.gold_agg,
             std::nullopt, std::nullopt},
            {"non-pediatric", sub.non_pediatric.weak_agg,
             sub.non_pediatric.gold_agg, std::nullopt, std::nullopt}};
        text += render_results_table(
            "== pediatric vs non-pediatric (weak-trained, with diagnosis) ==",
            sub_rows);
        text += '\n';
      }

      if (!cfg_.logo_group_by.empty() && variant == InputVariant::with_diagnosis) {
        std::map<std::string, std::string> group_of;
        for (const auto& l : ctx.corpus.letters)
          group_of[l.id] =
              cfg_.logo_group_by == "hospital" ? l.hospital_id : l.lhu_id;
        LogoReport logo =
            run_logo(features, ctx.weak, "weak", ctx.weak, ctx.gold, group_of,
                     cfg_.logo_group_by, cfg_.logo_min_positives, cv_cfg);
        block["logo"] = logo.to_json();
        std::vector<ResultRow> logo_rows;
        for (const auto& g : logo.groups)
          logo_rows.push_back(
              {g.group, std::nullopt, std::nullopt, g.vs_weak, g.vs_gold});
        text += render_results_table(
            "== leave-one-" + cfg_.logo_group_by + "-out (weak-trained) ==",
            logo_rows);
        if (!logo.excluded.empty()) {
          text += "excluded groups:";
          for (const auto& e : logo.excluded) text += " " + e;
          text += "\n";
        }
        text += '\n';
      }

      report[to_string(variant)] = block;
      text = render_results_table(
                 "== 10-fold stratified CV, " + to_string(variant) +
                     " (k=" + std::to_string(cfg_.k_folds) +
                     ", stratified on " + ctx.plan.stratify_on +
                     ", std dev over folds in parentheses) ==",
                 rows) +
             "\n" + text;
    }

    std::ofstream jout(dir_ / "report.json", std::ios::binary);
    jout << report.dump(2) << '\n';
    std::ofstream tout(dir_ / "report.txt", std::ios::binary);
    tout << text;
  }

  static void append_folds_csv(std::ofstream& out, const std::string& variant,
                               const CvReport& cv) {
    auto write = [&](const FoldOutcome& f, const char* source, const Metrics& m) {
      out << variant << ',' << cv.model_name << ',' << f.fold << ',' << source
          << ',' << pdetail::fmt_double(m.precision) << ','
          << pdetail::fmt_double(m.recall) << ',' << pdetail::fmt_double(m.f1)
          << ',' << (m.auc ? pdetail::fmt_double(*m.auc) : std::string()) << '\n';
    };
    for (const auto& f : cv.folds) {
      if (f.vs_weak) write(f, "weak", *f.vs_weak);
      if (f.vs_gold) write(f, "gold", *f.vs_gold);
    }
  }

  void do_sensitivity() {
    EvalContext ctx = make_eval_context();

    nlohmann::json sel;
    {
      std::ifstream in(dir_ / "selection.json");
      if (!in) throw std::runtime_error("cannot open selection.json");
      in >> sel;
    }
    std::vector<int> selected = sel.at("selected").get<std::vector<int>>();
    if (selected.size() < 2)
      throw std::runtime_error(
          "sensitivity: needs at least 2 selected clusters, have " +
          std::to_string(selected.size()));

    std::map<std::string, int> letter_cluster = read_letter_clusters();
    TrainConfig cv_cfg = cfg_.train;
    cv_cfg.seed = derive_seed(cfg_.seed, "cv");
    FeatureSet features = build_features_for(ctx.corpus, ctx.extraction,
                                             InputVariant::with_diagnosis);

    nlohmann::json report;
    report["selection_level"] = sel.at("level");
    nlohmann::json runs = nlohmann::json::array();
    std::vector<ResultRow> rows;

    CvReport baseline = run_cv(features, ctx.weak, "weak", ctx.weak, ctx.gold,
                               ctx.plan, cv_cfg, "all clusters");
    rows.push_back({"all clusters", baseline.weak_agg, baseline.gold_agg,
                    std::nullopt, std::nullopt});
    {
      nlohmann::json rj = baseline.to_json();
      rj["excluded_cluster"] = nullptr;
      runs.push_back(rj);
    }

    for (int excluded : selected) {
      std::map<std::string, int> weak;
      std::size_t coverage = 0;
      for (const auto& [id, label] : ctx.weak) {
        int value = label;
        auto cit = letter_cluster.find(id);
        if (value == 1 && cit != letter_cluster.end() && cit->second == excluded) {
          value = 0;
          ++coverage;
        }
        weak[id] = value;
      }
      CvReport cv = run_cv(features, weak, "weak", weak, ctx.gold, ctx.plan,
                           cv_cfg, "without #" + std::to_string(excluded));
      nlohmann::json rj = cv.to_json();
      rj["excluded_cluster"] = excluded;
      rj["excluded_coverage"] = coverage;
      runs.push_back(rj);
      rows.push_back({"without #" + std::to_string(excluded) + " (" +
                          std::to_string(coverage) + " letters)",
                      cv.weak_agg, cv.gold_agg, std::nullopt, std::nullopt});
    }
    report["runs"] = runs;

    std::ofstream jout(dir_ / "sensitivity.json", std::ios::binary);
    jout << report.dump(2) << '\n';
    std::ofstream tout(dir_ / "sensitivity.txt", std::ios::binary);
    tout << render_results_table(
        "== cluster-exclusion sensitivity (weak-trained, with diagnosis) ==",
        rows);
  }

  PipelineConfig cfg_;
  std::filesystem::path dir_;
  std::optional<RunManifest> manifest_;
};

}  // namespace weakdx
