#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "weakdx/corpus.hpp"
#include "weakdx/embed.hpp"
#include "weakdx/extraction.hpp"
#include "weakdx/rng.hpp"
#include "weakdx/textnorm.hpp"

namespace weakdx {

enum class InputVariant { with_diagnosis, without_diagnosis };
enum class ChunkMode { truncate, chunk };
enum class ClassWeighting { none, inverse_prevalence };

inline std::string to_string(InputVariant v) {
  return v == InputVariant::with_diagnosis ? "with_diagnosis" : "without_diagnosis";
}

/// Tokenized model input for one letter. In without_diagnosis mode the raw
/// diagnosis span is cut from the stripped text first. The default truncates
/// to max_tokens; chunk mode yields consecutive chunks of at most max_tokens.
inline std::vector<TokenList> prepare_input(std::string_view stripped_text,
                                            const DiagnosisString* diag,
                                            InputVariant variant,
                                            std::size_t max_tokens = 512,
                                            ChunkMode mode = ChunkMode::truncate) {
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be >= 1");
  std::string text;
  if (variant == InputVariant::without_diagnosis && diag &&
      diag->span_end <= stripped_text.size() &&
      diag->span_start < diag->span_end) {
    text.assign(stripped_text.substr(0, diag->span_start));
    text += stripped_text.substr(diag->span_end);
  } else {
    text.assign(stripped_text);
  }

  TokenList tokens = normalize_tokens(text);
  std::vector<TokenList> chunks;
  if (mode == ChunkMode::truncate) {
    if (tokens.size() > max_tokens) tokens.resize(max_tokens);
    chunks.push_back(std::move(tokens));
  } else {
    for (std::size_t start = 0; start < tokens.size(); start += max_tokens) {
      std::size_t end = std::min(tokens.size(), start + max_tokens);
      chunks.emplace_back(tokens.begin() + start, tokens.begin() + end);
    }
    if (chunks.empty()) chunks.emplace_back();
  }
  return chunks;
}

struct TrainConfig {
  double learning_rate = 1e-3;  // initial; decays linearly to 0
  double weight_decay = 0.01;   // decoupled, applied to weights only
  std::size_t epochs = 6;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  ClassWeighting class_weighting = ClassWeighting::inverse_prevalence;

  void validate() const {
    if (learning_rate <= 0.0)
      throw std::invalid_argument("learning_rate must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"class_weighting", class_weighting == ClassWeighting::none
                                    ? "none"
                                    : "inverse_prevalence"}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    std::string w = j.value("class_weighting", "inverse_prevalence");
    if (w == "none")
      c.class_weighting = ClassWeighting::none;
    else if (w == "inverse_prevalence")
      c.class_weighting = ClassWeighting::inverse_prevalence;
    else
      throw std::runtime_error("unknown class_weighting: " + w);
    return c;
  }
};

// Clamped so probabilities stay strictly inside (0,1) in double precision.
inline double sigmoid(double z) {
  z = std::clamp(z, -36.0, 36.0);
  return 1.0 / (1.0 + std::exp(-z));
}

/// Linear classification head over document embeddings.
struct ClassifierModel {
  std::vector<double> weights;
  double bias = 0.0;
  std::string embedder_fingerprint;
  std::string trained_on;  // "weak" or "gold"
  double threshold = 0.5;
  double final_loss = 0.0;
  TrainConfig config;

  std::size_t dim() const { return weights.size(); }

  double margin(const EmbeddingVector& v) const {
    if (v.dim() != weights.size())
      throw std::invalid_argument("predict: feature dimension mismatch");
    double z = bias;
    for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * v.values[i];
    return z;
  }

  nlohmann::json to_json() const {
    return {{"weights", weights},
            {"bias", bias},
            {"dim", weights.size()},
            {"embedder_fingerprint", embedder_fingerprint},
            {"trained_on", trained_on},
            {"threshold", threshold},
            {"final_loss", final_loss},
            {"train_config", config.to_json()}};
  }

  static ClassifierModel from_json(const nlohmann::json& j) {
    ClassifierModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.embedder_fingerprint = j.at("embedder_fingerprint").get<std::string>();
    m.trained_on = j.at("trained_on").get<std::string>();
    m.threshold = j.at("threshold").get<double>();
    m.final_loss = j.value("final_loss", 0.0);
    m.config = TrainConfig::from_json(j.at("train_config"));
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file " + path);
    out << to_json().dump(2) << '\n';
  }

  static ClassifierModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

/// One training example: an embedded chunk with its label and class weight.
struct TrainExample {
  const EmbeddingVector* features;
  int label;
  double weight;
};

namespace cdetail {

// Weighted mean logistic loss and its gradient over a batch.
inline double batch_loss_grad(const std::vector<TrainExample>& batch,
                              const std::vector<double>& weights, double bias,
                              std::vector<double>* grad_w, double* grad_b) {
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grad_w) std::fill(grad_w->begin(), grad_w->end(), 0.0);
  if (grad_b) *grad_b = 0.0;
  double loss = 0.0;
  for (const auto& ex : batch) {
    double z = bias;
    const auto& x = ex.features->values;
    for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * x[i];
    // log(1 + exp(t)) computed without overflow
    auto softplus = [](double t) {
      return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    };
    loss += ex.weight * softplus(ex.label ? -z : z) * inv;
    double residual = ex.weight * (sigmoid(z) - static_cast<double>(ex.label)) * inv;
    if (grad_w)
      for (std::size_t i = 0; i < weights.size(); ++i)
        (*grad_w)[i] += residual * x[i];
    if (grad_b) *grad_b += residual;
  }
  return loss;
}

}  // namespace cdetail

/// Mini-batch gradient descent (AdamW-style adaptive moments) on the weighted
/// logistic loss, with a linear learning-rate decay and decoupled weight
/// decay applied to the weights only. Deterministic given the seed: the
/// per-epoch shuffle is part of the seeded contract.
inline ClassifierModel train_classifier(
    const std::vector<const EmbeddingVector*>& features,
    const std::vector<int>& labels, const TrainConfig& cfg,
    const std::string& embedder_fingerprint, const std::string& trained_on) {
  cfg.validate();
  if (features.size() != labels.size())
    throw std::invalid_argument("train_classifier: features/labels size mismatch");
  if (features.empty())
    throw std::invalid_argument("train_classifier: empty training set");

  std::size_t n_pos = 0;
  for (int label : labels) n_pos += label ? 1 : 0;
  std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument(
        "train_classifier: training set contains a single class");

  const std::size_t dim = features[0]->dim();
  for (const auto* f : features)
    if (f->dim() != dim)
      throw std::invalid_argument("train_classifier: ragged feature dimensions");

  double w_pos = 1.0, w_neg = 1.0;
  if (cfg.class_weighting == ClassWeighting::inverse_prevalence) {
    double n = static_cast<double>(labels.size());
    w_pos = n / (2.0 * static_cast<double>(n_pos));
    w_neg = n / (2.0 * static_cast<double>(n_neg));
  }

  std::vector<TrainExample> examples(features.size());
  for (std::size_t i = 0; i < features.size(); ++i)
    examples[i] = {features[i], labels[i], labels[i] ? w_pos : w_neg};

  ClassifierModel model;
  model.weights.assign(dim, 0.0);
  model.embedder_fingerprint = embedder_fingerprint;
  model.trained_on = trained_on;
  model.config = cfg;

  const std::size_t batches_per_epoch =
      (examples.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches_per_epoch;

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> grad_w(dim, 0.0);
  std::vector<double> m1(dim + 1, 0.0), m2(dim + 1, 0.0);  // last slot: bias
  std::vector<TrainExample> batch;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Each epoch shuffles the identity order, so epoch k's batches depend
    // only on (seed, k).
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, "epoch-" + std::to_string(epoch)));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      batch.clear();
      std::size_t begin = b * cfg.batch_size;
      std::size_t end = std::min(examples.size(), begin + cfg.batch_size);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(examples[order[i]]);
      if (batch.empty()) continue;

      double grad_b = 0.0;
      double loss =
          cdetail::batch_loss_grad(batch, model.weights, model.bias, &grad_w, &grad_b);
      epoch_loss += loss * static_cast<double>(batch.size());

      double lr = cfg.learning_rate *
                  (static_cast<double>(total_steps - step) /
                   static_cast<double>(total_steps));
      ++step;
      double corr1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      double corr2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto adam_step = [&](double& m, double& v, double g) {
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        return lr * (m / corr1) / (std::sqrt(v / corr2) + eps);
      };
      for (std::size_t i = 0; i < dim; ++i)
        model.weights[i] = model.weights[i] * (1.0 - lr * cfg.weight_decay) -
                           adam_step(m1[i], m2[i], grad_w[i]);
      model.bias -= adam_step(m1[dim], m2[dim], grad_b);
    }
    epoch_loss /= static_cast<double>(examples.size());
    if (!std::isfinite(epoch_loss))
      throw std::runtime_error("train_classifier: loss diverged at epoch " +
                               std::to_string(epoch + 1));
    model.final_loss = epoch_loss;
  }
  return model;
}

/// Per-chunk sigmoid scores combined by maximum.
inline double predict_proba_chunks(const ClassifierModel& model,
                                   const std::vector<EmbeddingVector>& chunks) {
  if (chunks.empty())
    throw std::invalid_argument("predict_proba_chunks: no chunks");
  double best = 0.0;
  for (const auto& chunk : chunks)
    best = std::max(best, sigmoid(model.margin(chunk)));
  return best;
}

// ---------------------------------------------------------------------------
// Feature construction over a corpus
// ---------------------------------------------------------------------------

/// Embedded inputs per letter for one variant, so folds and model rows train
/// on the exact same vectors.
struct FeatureSet {
  std::vector<std::string> letter_ids;
  std::vector<std::vector<EmbeddingVector>> chunks;  // parallel to letter_ids
  std::unordered_map<std::string, std::size_t> index;
  std::string fingerprint;
  InputVariant variant = InputVariant::with_diagnosis;

  const std::vector<EmbeddingVector>* for_letter(const std::string& id) const {
    auto it = index.find(id);
    return it == index.end() ? nullptr : &chunks[it->second];
  }
};

inline FeatureSet build_features(
    const Corpus& corpus, const ExtractionOutput& extraction, InputVariant variant,
    const EmbedderConfig& embedder, std::size_t max_tokens = 512,
    ChunkMode mode = ChunkMode::truncate,
    const std::vector<BoilerplateMarker>& markers = default_boilerplate_markers()) {
  FeatureSet fs;
  fs.fingerprint = embedder.fingerprint();
  fs.variant = variant;
  fs.letter_ids.reserve(corpus.size());
  fs.chunks.reserve(corpus.size());
  for (const auto& letter : corpus.letters) {
    std::string stripped = strip_boilerplate(letter.text, markers);
    const DiagnosisString* diag = extraction.for_letter(letter.id);
    auto token_chunks = prepare_input(stripped, diag, variant, max_tokens, mode);
    std::vector<EmbeddingVector> vecs;
    vecs.reserve(token_chunks.size());
    for (const auto& chunk : token_chunks) vecs.push_back(embed_text(chunk, embedder));
    fs.index.emplace(letter.id, fs.letter_ids.size());
    fs.letter_ids.push_back(letter.id);
    fs.chunks.push_back(std::move(vecs));
  }
  return fs;
}

/// Externally supplied letter vectors take the place of the built-in
/// embedder; the variant distinction collapses because the vectors arrive
/// precomputed.
inline FeatureSet build_features_external(
    const Corpus& corpus, const std::map<std::string, EmbeddingVector>& by_id) {
  FeatureSet fs;
  fs.variant = InputVariant::with_diagnosis;
  std::size_t dim = 0;
  for (const auto& letter : corpus.letters) {
    auto it = by_id.find(letter.id);
    if (it == by_id.end())
      throw std::runtime_error("missing embedding for id=" + letter.id);
    if (dim == 0) dim = it->second.dim();
    fs.index.emplace(letter.id, fs.letter_ids.size());
    fs.letter_ids.push_back(letter.id);
    fs.chunks.push_back({it->second});
  }
  fs.fingerprint = "external_file/d" + std::to_string(dim);
  return fs;
}

/// Trains on the first chunk of each labeled letter (the truncation setting);
/// chunking affects prediction, where chunk scores combine by max.
inline ClassifierModel train_on_features(const FeatureSet& fs,
                                         const std::map<std::string, int>& labels,
                                         const TrainConfig& cfg,
                                         const std::string& trained_on) {
  std::vector<const EmbeddingVector*> features;
  std::vector<int> y;
  for (std::size_t i = 0; i < fs.letter_ids.size(); ++i) {
    auto it = labels.find(fs.letter_ids[i]);
    if (it == labels.end()) continue;
    features.push_back(&fs.chunks[i][0]);
    y.push_back(it->second);
  }
  return train_classifier(features, y, cfg, fs.fingerprint, trained_on);
}

inline double predict_proba(const ClassifierModel& model, const FeatureSet& fs,
                            const std::string& letter_id) {
  if (model.embedder_fingerprint != fs.fingerprint)
    throw std::runtime_error("embedder fingerprint mismatch: model has '" +
                             model.embedder_fingerprint + "', features have '" +
                             fs.fingerprint + "'");
  const auto* chunks = fs.for_letter(letter_id);
  if (!chunks) throw std::runtime_error("no features for letter " + letter_id);
  return predict_proba_chunks(model, *chunks);
}

// ---------------------------------------------------------------------------
// Rule-based baselines
// ---------------------------------------------------------------------------

enum class RuleScope { full_text, diagnosis_only };

/// Whole-token, case-insensitive search for the disease term in the stripped
/// letter (full_text) or in the trimmed diagnosis string (diagnosis_only,
/// negative when no string was extracted).
inline bool rule_classify(std::string_view stripped_text,
                          const DiagnosisString* diag, RuleScope scope,
                          const std::string& term) {
  TokenList term_tok = normalize_tokens(term);
  if (term_tok.size() != 1 || term_tok[0] != term)
    throw std::invalid_argument("rule_classify: term must be a normalized token");
  if (scope == RuleScope::diagnosis_only) {
    if (!diag) return false;
    TokenList tokens = normalize_tokens(diag->trimmed);
    return std::find(tokens.begin(), tokens.end(), term) != tokens.end();
  }
  TokenList tokens = normalize_tokens(stripped_text);
  return std::find(tokens.begin(), tokens.end(), term) != tokens.end();
}

}  // namespace weakdx
