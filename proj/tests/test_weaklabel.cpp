#include <catch2/catch.hpp>

#include <set>

#include "weakdx/rng.hpp"
#include "weakdx/weaklabel.hpp"

using namespace weakdx;

namespace {

ClusterSummary summary_of(int id, std::vector<std::string> keywords) {
  ClusterSummary s;
  s.cluster_id = id;
  s.keywords = std::move(keywords);
  s.size = 1;
  return s;
}

}  // namespace

TEST_CASE("select_clusters needs all positive and no negative keywords") {
  std::vector<DiseaseDefinition> defs = {
      {"bronchiolite", {"bronchiolite"}, {}},
      {"bronchiolite", {"broncospasmo", "febbre"}, {}}};
  std::vector<ClusterSummary> summaries = {
      summary_of(0, {"acuto", "broncospasmo", "corso", "febbre", "paziente"}),
      summary_of(1, {"broncospasmo", "otite"}),
      summary_of(2, {"bronchiolite", "lieve"}),
  };
  ClusterSelection sel = select_clusters(summaries, defs);
  CHECK(sel.selected == std::vector<int>{0, 2});
  CHECK(sel.fired_definition.at(0) == 1);
  CHECK(sel.fired_definition.at(2) == 0);
}

TEST_CASE("negative keywords veto a cluster") {
  std::vector<DiseaseDefinition> defs = {
      {"bronchiolite", {"bronchiolite"}, {"sospetta"}}};
  std::vector<ClusterSummary> summaries = {
      summary_of(0, {"bronchiolite", "sospetta"}),
      summary_of(1, {"bronchiolite", "lieve"})};
  ClusterSelection sel = select_clusters(summaries, defs);
  CHECK(sel.selected == std::vector<int>{1});
}

TEST_CASE("empty selection is allowed") {
  std::vector<DiseaseDefinition> defs = {{"varicella", {"varicella"}, {}}};
  std::vector<ClusterSummary> summaries = {summary_of(0, {"trauma", "cranico"})};
  CHECK(select_clusters(summaries, defs).selected.empty());
}

TEST_CASE("adding definitions only ever grows the selection") {
  Rng rng(404);
  const std::vector<std::string> vocab = {"febbre", "otite",  "tosse",
                                          "trauma", "virosi", "broncospasmo"};
  for (int round = 0; round < 50; ++round) {
    std::vector<ClusterSummary> summaries;
    for (int c = 0; c < 6; ++c) {
      std::vector<std::string> kws;
      for (const auto& t : vocab)
        if (rng.next_double() < 0.4) kws.push_back(t);
      summaries.push_back(summary_of(c, kws));
    }
    std::vector<DiseaseDefinition> defs;
    for (int d = 0; d < 3; ++d) {
      DiseaseDefinition def;
      def.disease = "x";
      def.positive = {vocab[rng.next_below(vocab.size())]};
      defs.push_back(def);
    }
    auto base = select_clusters(summaries, defs);
    DiseaseDefinition extra{"x", {vocab[rng.next_below(vocab.size())]}, {}};
    defs.push_back(extra);
    auto grown = select_clusters(summaries, defs);

    std::set<int> before(base.selected.begin(), base.selected.end());
    std::set<int> after(grown.selected.begin(), grown.selected.end());
    CHECK(std::includes(after.begin(), after.end(), before.begin(), before.end()));
  }
}

TEST_CASE("definition validation") {
  DiseaseDefinition no_pos{"x", {}, {}};
  CHECK_THROWS_AS(no_pos.validate(), std::invalid_argument);
  DiseaseDefinition overlap{"x", {"febbre"}, {"febbre"}};
  CHECK_THROWS_AS(overlap.validate(), std::invalid_argument);
  DiseaseDefinition unnormalized{"x", {"Febbre"}, {}};
  CHECK_THROWS_AS(unnormalized.validate(), std::invalid_argument);
  DiseaseDefinition with_digit{"x", {"f3bbre"}, {}};
  CHECK_THROWS_AS(with_digit.validate(), std::invalid_argument);
}

TEST_CASE("definitions json round trip") {
  auto defs = DiseaseDefinition::defaults();
  auto back = DiseaseDefinition::list_from_json(
      DiseaseDefinition::list_to_json(defs));
  REQUIRE(back.size() == defs.size());
  CHECK(back[0].positive == defs[0].positive);
  CHECK(back[1].positive == defs[1].positive);
  CHECK_THROWS(DiseaseDefinition::list_from_json(nlohmann::json::array()));
}

TEST_CASE("assign_weak_labels covers every letter") {
  Corpus corpus;
  corpus.letters.push_back({"L1", "H", "U", "2020-01-01",
                            "Diagnosi: bronchiolite lieve\ntesto", std::nullopt,
                            false});
  corpus.letters.push_back({"L2", "H", "U", "2020-01-02",
                            "lettera senza sezione diagnosi", std::nullopt,
                            false});
  corpus.letters.push_back({"L3", "H", "U", "2020-01-03",
                            "Diagnosi: stringa anomala\ntesto", std::nullopt,
                            false});

  ExtractionOutput extraction = extract_all(corpus, ExtractionRules::defaults());
  REQUIRE(extraction.strings.size() == 2);

  std::unordered_map<std::string, int> cluster_of;
  cluster_of["bronchiolite lieve"] = 0;
  cluster_of["stringa anomala"] = -1;  // HDBSCAN noise

  ClusterSelection selection;
  selection.selected = {0};
  selection.level = 1;

  auto defs = DiseaseDefinition::defaults();
  WeakLabelSet weak =
      assign_weak_labels(corpus, extraction, cluster_of, selection, defs);

  REQUIRE(weak.labels.size() == 3);
  CHECK(weak.labels.at("L1") == 1);
  CHECK(weak.labels.at("L2") == 0);  // no diagnosis string
  CHECK(weak.labels.at("L3") == 0);  // noise-assigned string
  CHECK(weak.positives() == 1);
  CHECK(weak.selected_clusters == std::vector<int>{0});
  CHECK(weak.letter_cluster.at("L1") == 0);
  CHECK(!weak.letter_cluster.count("L3"));

  // weak-positive rate cannot exceed extraction coverage
  double rate = static_cast<double>(weak.positives()) / corpus.size();
  CHECK(rate <= extraction.coverage);
}
