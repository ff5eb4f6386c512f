#include <catch2/catch.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "weakdx/embed.hpp"
#include "weakdx/rng.hpp"

using namespace weakdx;
namespace fs = std::filesystem;

namespace {

EmbedderConfig small_embedder() {
  EmbedderConfig cfg;
  cfg.dim = 64;
  return cfg;
}

std::vector<EmbeddingVector> random_vectors(std::size_t n, std::size_t dim,
                                            Rng& rng) {
  std::vector<EmbeddingVector> out(n);
  for (auto& v : out) {
    v.values.resize(dim);
    for (auto& x : v.values) x = rng.next_gaussian();
  }
  return out;
}

std::vector<std::vector<double>> covariance_of(
    const std::vector<EmbeddingVector>& vecs) {
  const std::size_t n = vecs.size(), d = vecs[0].dim();
  std::vector<double> mean(d, 0.0);
  for (const auto& v : vecs)
    for (std::size_t j = 0; j < d; ++j) mean[j] += v.values[j] / n;
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& v : vecs)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        cov[a][b] += (v.values[a] - mean[a]) * (v.values[b] - mean[b]) / (n - 1);
  return cov;
}

}  // namespace

TEST_CASE("embed_text is deterministic and unit length") {
  EmbedderConfig cfg;  // default 768-dim
  EmbeddingVector a = embed_text({"bronchiolite"}, cfg);
  EmbeddingVector b = embed_text({"bronchiolite"}, cfg);
  CHECK(a.values == b.values);
  CHECK(std::fabs(a.norm() - 1.0) <= 1e-9);
  CHECK(!a.degenerate);
}

TEST_CASE("embed_text flags empty input as degenerate") {
  EmbeddingVector v = embed_text({}, small_embedder());
  CHECK(v.degenerate);
  CHECK(v.norm() == 0.0);
}

TEST_CASE("shared n-grams bring related strings closer") {
  EmbedderConfig cfg;  // shipped default dim and hash seed
  EmbeddingVector lieve = embed_text({"bronchiolite", "lieve"}, cfg);
  EmbeddingVector acuta = embed_text({"bronchiolite", "acuta"}, cfg);
  EmbeddingVector trauma = embed_text({"trauma", "cranico"}, cfg);
  CHECK(cosine(lieve, acuta) > cosine(lieve, trauma));
}

TEST_CASE("load_external_embeddings validates the file") {
  auto path = fs::temp_directory_path() / "emb_ok.jsonl";
  {
    std::ofstream out(path);
    out << R"({"id":"a","vector":[3.0,4.0]})" << '\n'
        << R"({"id":"b","vector":[1.0,0.0]})" << '\n';
  }
  auto loaded = load_external_embeddings(path.string(), {"a", "b"});
  CHECK(loaded.size() == 2);
  CHECK(std::fabs(loaded.at("a").norm() - 1.0) <= 1e-12);  // re-normalized
  CHECK(loaded.at("a").values[0] == Approx(0.6));

  CHECK_THROWS_WITH(load_external_embeddings(path.string(), {"a", "b", "c"}),
                    Catch::Contains("missing embedding for id=c"));

  auto ragged = fs::temp_directory_path() / "emb_ragged.jsonl";
  {
    std::ofstream out(ragged);
    out << R"({"id":"a","vector":[1.0,0.0]})" << '\n'
        << R"({"id":"b","vector":[1.0,0.0,0.0]})" << '\n';
  }
  CHECK_THROWS_WITH(load_external_embeddings(ragged.string(), {"a"}),
                    Catch::Contains("ragged"));

  auto dup = fs::temp_directory_path() / "emb_dup.jsonl";
  {
    std::ofstream out(dup);
    out << R"({"id":"a","vector":[1.0,0.0]})" << '\n'
        << R"({"id":"a","vector":[0.0,1.0]})" << '\n';
  }
  CHECK_THROWS_WITH(load_external_embeddings(dup.string(), {"a"}),
                    Catch::Contains("duplicate"));
}

TEST_CASE("fit_pca on collinear points") {
  std::vector<EmbeddingVector> pts = {{{1.0, 1.0}, false},
                                      {{2.0, 2.0}, false},
                                      {{3.0, 3.0}, false}};
  PcaModel model = fit_pca(pts, 1);
  REQUIRE(model.components.size() == 1);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(model.components[0][0] == Approx(inv_sqrt2).margin(1e-12));
  CHECK(model.components[0][1] == Approx(inv_sqrt2).margin(1e-12));

  // explained variance covers the total variance for collinear data
  double total = 2.0;  // var(x) + var(y) = 1 + 1
  CHECK(model.explained_variance[0] == Approx(total).epsilon(1e-12));

  // projecting the mean gives zero; training points land at sqrt(2)*(x-2)
  EmbeddingVector mean{{2.0, 2.0}, false};
  CHECK(project_pca(model, mean)[0] == Approx(0.0).margin(1e-12));
  CHECK(project_pca(model, pts[0])[0] ==
        Approx(-std::sqrt(2.0)).margin(1e-12));
  CHECK(project_pca(model, pts[2])[0] == Approx(std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("fit_pca matches the Jacobi oracle") {
  Rng rng(4242);
  for (int round = 0; round < 40; ++round) {
    std::size_t n = 3 + rng.next_below(18);   // covers both n > dim and n <= dim
    std::size_t dim = 2 + rng.next_below(11);
    auto vecs = random_vectors(n, dim, rng);
    std::size_t k = std::min(dim, n - 1);
    PcaModel model = fit_pca(vecs, k);

    auto eig = oracles::jacobi_eigenvalues(covariance_of(vecs));
    double scale = std::max(1e-12, std::fabs(eig[0]));
    for (std::size_t i = 0; i < k; ++i)
      CHECK(std::fabs(model.explained_variance[i] - eig[i]) / scale <= 1e-8);

    // trace identity: eigenvalue sum equals total variance
    double trace = 0.0;
    auto cov = covariance_of(vecs);
    for (std::size_t i = 0; i < dim; ++i) trace += cov[i][i];
    double lambda_sum = 0.0;
    for (double ev : eig) lambda_sum += ev;
    CHECK(std::fabs(lambda_sum - trace) / std::max(1.0, trace) <= 1e-8);
  }
}

TEST_CASE("pca components are orthonormal with the sign convention") {
  Rng rng(7);
  auto vecs = random_vectors(30, 8, rng);
  PcaModel model = fit_pca(vecs, 6);
  for (std::size_t a = 0; a < model.components.size(); ++a) {
    for (std::size_t b = 0; b < model.components.size(); ++b) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < 8; ++j)
        dotp += model.components[a][j] * model.components[b][j];
      CHECK(std::fabs(dotp - (a == b ? 1.0 : 0.0)) <= 1e-8);
    }
    double best = 0.0;
    for (double x : model.components[a]) best = std::max(best, std::fabs(x));
    bool found_nonneg_max = false;
    for (double x : model.components[a])
      if (std::fabs(std::fabs(x) - best) < 1e-15 && x >= 0.0)
        found_nonneg_max = true;
    CHECK(found_nonneg_max);
  }
}

TEST_CASE("projected training data has zero mean and matching variance") {
  Rng rng(11);
  auto vecs = random_vectors(25, 6, rng);
  std::size_t k = 4;
  PcaModel model = fit_pca(vecs, k);
  std::vector<std::vector<double>> projected;
  for (const auto& v : vecs) projected.push_back(project_pca(model, v));
  for (std::size_t c = 0; c < k; ++c) {
    double mean = 0.0;
    for (const auto& p : projected) mean += p[c] / projected.size();
    CHECK(std::fabs(mean) <= 1e-9);
    double var = 0.0;
    for (const auto& p : projected)
      var += (p[c] - mean) * (p[c] - mean) / (projected.size() - 1);
    double scale = std::max(1e-12, model.explained_variance[0]);
    CHECK(std::fabs(var - model.explained_variance[c]) / scale <= 1e-8);
  }
}

TEST_CASE("projection plus reconstruction recovers the input at full rank") {
  Rng rng(13);
  auto vecs = random_vectors(20, 5, rng);  // n > dim: full basis available
  PcaModel model = fit_pca(vecs, 5);
  for (const auto& v : vecs) {
    auto proj = project_pca(model, v);
    for (std::size_t j = 0; j < 5; ++j) {
      double rec = model.mean[j];
      for (std::size_t c = 0; c < 5; ++c)
        rec += proj[c] * model.components[c][j];
      CHECK(rec == Approx(v.values[j]).margin(1e-8));
    }
  }
}

TEST_CASE("gram path handles rank-deficient data") {
  // 4 points in 6 dims: rank <= 3, ask for k = 3
  Rng rng(19);
  auto vecs = random_vectors(4, 6, rng);
  PcaModel model = fit_pca(vecs, 3);
  CHECK(model.components.size() == 3);
  CHECK(model.explained_variance[2] >= 0.0);
  // non-increasing
  CHECK(model.explained_variance[0] >= model.explained_variance[1]);
  CHECK(model.explained_variance[1] >= model.explained_variance[2]);
}

TEST_CASE("fit_pca and project_pca validate arguments") {
  Rng rng(3);
  auto vecs = random_vectors(5, 3, rng);
  CHECK_THROWS_AS(fit_pca(vecs, 0), std::invalid_argument);
  CHECK_THROWS_AS(fit_pca(vecs, 4), std::invalid_argument);  // k > n-1
  CHECK_THROWS_AS(fit_pca({vecs[0]}, 1), std::invalid_argument);
  PcaModel model = fit_pca(vecs, 2);
  EmbeddingVector wrong{{1.0, 2.0}, false};
  CHECK_THROWS_AS(project_pca(model, wrong), std::invalid_argument);
}

TEST_CASE("pca model json round trip") {
  Rng rng(23);
  auto vecs = random_vectors(10, 4, rng);
  PcaModel model = fit_pca(vecs, 3);
  PcaModel back = PcaModel::from_json(model.to_json());
  CHECK(back.mean == model.mean);
  CHECK(back.components == model.components);
  CHECK(back.explained_variance == model.explained_variance);
  CHECK(back.k == model.k);
}
