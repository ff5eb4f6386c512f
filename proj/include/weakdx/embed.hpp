#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "weakdx/rng.hpp"
#include "weakdx/textnorm.hpp"

namespace weakdx {

struct EmbeddingVector {
  std::vector<double> values;
  bool degenerate = false;  // produced from empty input; excluded downstream

  std::size_t dim() const { return values.size(); }

  double norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
};

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

enum class EmbedderProvider { hashed_ngram, external_file };

/// Deterministic document-embedding configuration. The hashed n-gram provider
/// stands in for a transformer encoder behind the same vector contract, so
/// externally computed vectors can be swapped in via external_file.
struct EmbedderConfig {
  EmbedderProvider provider = EmbedderProvider::hashed_ngram;
  std::size_t dim = 768;
  std::size_t ngram_min = 3;
  std::size_t ngram_max = 5;
  std::uint64_t hash_seed = 41;

  void validate() const {
    if (dim < 8) throw std::invalid_argument("embedder dim must be >= 8");
    if (ngram_min < 1 || ngram_min > ngram_max)
      throw std::invalid_argument("char_ngram_range must satisfy 1 <= min <= max");
  }

  std::string fingerprint() const {
    switch (provider) {
      case EmbedderProvider::hashed_ngram:
        return "hashed_ngram/d" + std::to_string(dim) + "/n" +
               std::to_string(ngram_min) + "-" + std::to_string(ngram_max) +
               "/s" + std::to_string(hash_seed);
      case EmbedderProvider::external_file:
        return "external_file/d" + std::to_string(dim);
    }
    return "unknown";
  }
};

/// Signed-hash bag of token unigrams and character n-grams, L2-normalized.
/// Empty input yields the zero vector flagged degenerate.
inline EmbeddingVector embed_text(const TokenList& tokens,
                                  const EmbedderConfig& cfg) {
  cfg.validate();
  if (cfg.provider != EmbedderProvider::hashed_ngram)
    throw std::invalid_argument("embed_text requires the hashed_ngram provider");

  EmbeddingVector out;
  out.values.assign(cfg.dim, 0.0);
  if (tokens.empty()) {
    out.degenerate = true;
    return out;
  }

  const std::uint64_t base = fnv1a64_mix(14695981039346656037ull, cfg.hash_seed);
  auto add_feature = [&](std::string_view feature) {
    std::uint64_t h = fnv1a64(feature, base);
    double sign = (h >> 63) ? -1.0 : 1.0;
    out.values[h % cfg.dim] += sign;
  };

  std::string feature;
  for (const auto& tok : tokens) {
    feature.assign("w\x1f");
    feature += tok;
    add_feature(feature);
    for (std::size_t n = cfg.ngram_min; n <= cfg.ngram_max; ++n) {
      if (tok.size() < n) break;
      for (std::size_t i = 0; i + n <= tok.size(); ++i) {
        feature.assign("g\x1f");
        feature.append(tok, i, n);
        add_feature(feature);
      }
    }
  }

  double norm = out.norm();
  if (norm == 0.0) {
    // All feature signs cancelled; practically unreachable but keep the
    // degenerate contract instead of dividing by zero.
    out.degenerate = true;
    return out;
  }
  for (double& v : out.values) v /= norm;
  return out;
}

/// Loads externally computed vectors (JSONL of {id, vector}) covering every
/// expected id exactly once, re-normalized on load.
inline std::map<std::string, EmbeddingVector> load_external_embeddings(
    const std::string& path, const std::vector<std::string>& expected_ids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings file " + path);

  std::map<std::string, EmbeddingVector> loaded;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("embeddings line " + std::to_string(line_no) +
                               ": malformed JSON: " + e.what());
    }
    std::string id = j.at("id").get<std::string>();
    if (loaded.count(id))
      throw std::runtime_error("duplicate embedding for id=" + id);
    EmbeddingVector v;
    v.values = j.at("vector").get<std::vector<double>>();
    if (dim == 0) dim = v.dim();
    if (v.dim() != dim)
      throw std::runtime_error("ragged embedding dimensions: id=" + id +
                               " has dim " + std::to_string(v.dim()) +
                               ", expected " + std::to_string(dim));
    double norm = v.norm();
    if (norm > 0.0)
      for (double& x : v.values) x /= norm;
    else
      v.degenerate = true;
    loaded.emplace(std::move(id), std::move(v));
  }
  for (const auto& id : expected_ids)
    if (!loaded.count(id))
      throw std::runtime_error("missing embedding for id=" + id);
  return loaded;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

/// Principal components of a sample (covariance divisor n-1). Components are
/// orthonormal rows; each component's largest-magnitude entry is non-negative
/// so the decomposition is sign-deterministic.
struct PcaModel {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // k rows of length dim
  std::vector<double> explained_variance;      // non-increasing
  std::size_t k = 0;

  std::size_t input_dim() const { return mean.size(); }

  nlohmann::json to_json() const {
    return {{"mean", mean},
            {"components", components},
            {"explained_variance", explained_variance},
            {"k", k}};
  }

  static PcaModel from_json(const nlohmann::json& j) {
    PcaModel m;
    m.mean = j.at("mean").get<std::vector<double>>();
    m.components = j.at("components").get<std::vector<std::vector<double>>>();
    m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
    m.k = j.at("k").get<std::size_t>();
    return m;
  }
};

namespace detail {

inline void apply_sign_convention(std::vector<double>& component) {
  std::size_t arg = 0;
  double best = 0.0;
  for (std::size_t i = 0; i < component.size(); ++i) {
    double mag = std::fabs(component[i]);
    if (mag > best) {
      best = mag;
      arg = i;
    }
  }
  if (component[arg] < 0.0)
    for (double& v : component) v = -v;
}

}  // namespace detail

/// Fits the top-k principal components. Uses the dim x dim covariance when
/// n > dim, otherwise the n x n Gram matrix; rank-deficient data yields
/// trailing zero eigenvalues with a deterministic orthonormal completion.
inline PcaModel fit_pca(const std::vector<EmbeddingVector>& vectors,
                        std::size_t k) {
  const std::size_t n = vectors.size();
  if (n < 2) throw std::invalid_argument("fit_pca requires at least 2 vectors");
  const std::size_t dim = vectors[0].dim();
  for (const auto& v : vectors)
    if (v.dim() != dim)
      throw std::invalid_argument("fit_pca: inconsistent vector dimensions");
  if (k < 1 || k > std::min(dim, n - 1))
    throw std::invalid_argument("fit_pca: k must be in [1, min(dim, n-1)]");

  PcaModel model;
  model.k = k;
  model.mean.assign(dim, 0.0);
  for (const auto& v : vectors)
    for (std::size_t j = 0; j < dim; ++j) model.mean[j] += v.values[j];
  for (double& m : model.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd centered(n, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      centered(i, j) = vectors[i].values[j] - model.mean[j];

  std::vector<std::pair<double, Eigen::VectorXd>> eig;  // (value, direction)
  if (n > dim) {
    Eigen::MatrixXd cov =
        (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("fit_pca: eigendecomposition failed");
    for (std::size_t i = 0; i < dim; ++i) {
      std::size_t idx = dim - 1 - i;  // Eigen sorts ascending
      eig.emplace_back(solver.eigenvalues()(idx), solver.eigenvectors().col(idx));
      if (eig.size() == k) break;
    }
  } else {
    Eigen::MatrixXd gram =
        (centered * centered.transpose()) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success)
      throw std::runtime_error("fit_pca: eigendecomposition failed");
    double max_eval = std::max(0.0, solver.eigenvalues()(n - 1));
    for (std::size_t i = 0; i < n && eig.size() < k; ++i) {
      std::size_t idx = n - 1 - i;
      double lambda = solver.eigenvalues()(idx);
      if (lambda > std::max(1e-12, 1e-12 * max_eval)) {
        Eigen::VectorXd dir = centered.transpose() * solver.eigenvectors().col(idx);
        dir.normalize();
        eig.emplace_back(lambda, dir);
      }
    }
    // Deterministic completion for the null space: orthonormalize canonical
    // basis vectors against what we have.
    for (std::size_t e = 0; e < dim && eig.size() < k; ++e) {
      Eigen::VectorXd cand = Eigen::VectorXd::Zero(dim);
      cand(e) = 1.0;
      for (const auto& [val, dir] : eig) cand -= dir * dir.dot(cand);
      double norm = cand.norm();
      if (norm > 1e-8) eig.emplace_back(0.0, cand / norm);
    }
    if (eig.size() < k)
      throw std::runtime_error("fit_pca: could not complete an orthonormal basis");
  }

  for (auto& [value, dir] : eig) {
    std::vector<double> row(dim);
    for (std::size_t j = 0; j < dim; ++j) row[j] = dir(j);
    detail::apply_sign_convention(row);
    model.components.push_back(std::move(row));
    model.explained_variance.push_back(value < 0.0 && value > -1e-10 ? 0.0 : value);
  }
  return model;
}

/// Coordinates of (v - mean) on each component.
inline std::vector<double> project_pca(const PcaModel& model,
                                       const EmbeddingVector& v) {
  if (v.dim() != model.input_dim())
    throw std::invalid_argument("project_pca: dimension mismatch (" +
                                std::to_string(v.dim()) + " vs " +
                                std::to_string(model.input_dim()) + ")");
  std::vector<double> out(model.components.size(), 0.0);
  for (std::size_t c = 0; c < model.components.size(); ++c) {
    double s = 0.0;
    const auto& comp = model.components[c];
    for (std::size_t j = 0; j < comp.size(); ++j)
      s += (v.values[j] - model.mean[j]) * comp[j];
    out[c] = s;
  }
  return out;
}

}  // namespace weakdx
