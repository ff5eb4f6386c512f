// Command-line front end for the weak-supervision pipeline.
//
//   pipeline all --config cfg.json
//   pipeline <stage> --config cfg.json [--seed N]
//   pipeline predict --config cfg.json [--model model.json] [--output pred.csv]
//
// Exit code 0 on success, nonzero with a stage-qualified message otherwise.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "weakdx/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string output_dir;
  std::string rules_path;
  std::string abbreviations_path;
  std::string definitions_path;
  std::string embedder;
  std::string labels;
  std::string variant;
  long long seed = -1;
  long long embed_dim = -1;
  long long pca_dim = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "pipeline config JSON")
      ->required();
  cmd->add_option("--seed", opts.seed, "override the global seed");
  cmd->add_option("--output", opts.output_dir, "override the output directory");
  cmd->add_option("--rules", opts.rules_path, "extraction rules JSON");
  cmd->add_option("--abbreviations", opts.abbreviations_path,
                  "abbreviation table JSON");
  cmd->add_option("--definitions", opts.definitions_path,
                  "disease definitions JSON");
  cmd->add_option("--embedder", opts.embedder, "hashed_ngram | external")
      ->check(CLI::IsMember({"hashed_ngram", "external"}));
  cmd->add_option("--embed-dim", opts.embed_dim, "embedding dimension");
  cmd->add_option("--pca-dim", opts.pca_dim, "reduced dimension for clustering");
  cmd->add_option("--labels", opts.labels, "training label source (train stage)")
      ->check(CLI::IsMember({"weak", "gold"}));
  cmd->add_option("--variant", opts.variant,
                  "with_diagnosis | without_diagnosis (predict)")
      ->check(CLI::IsMember({"with_diagnosis", "without_diagnosis"}));
}

weakdx::PipelineConfig load_config(const CommonOpts& opts) {
  weakdx::PipelineConfig cfg = weakdx::PipelineConfig::from_file(opts.config_path);
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
  if (!opts.rules_path.empty())
    cfg.rules = weakdx::ExtractionRules::from_file(opts.rules_path);
  if (!opts.abbreviations_path.empty())
    cfg.abbreviations =
        weakdx::AbbreviationTable::from_file(opts.abbreviations_path);
  if (!opts.definitions_path.empty())
    cfg.definitions =
        weakdx::DiseaseDefinition::list_from_file(opts.definitions_path);
  if (!opts.embedder.empty())
    cfg.embedder.provider = opts.embedder == "external"
                                ? weakdx::EmbedderProvider::external_file
                                : weakdx::EmbedderProvider::hashed_ngram;
  if (opts.embed_dim > 0)
    cfg.embedder.dim = static_cast<std::size_t>(opts.embed_dim);
  if (opts.pca_dim > 0) cfg.pca_dim = static_cast<std::size_t>(opts.pca_dim);
  if (!opts.labels.empty()) cfg.train_labels = opts.labels;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-supervised diagnosis classification pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string model_path, predictions_path;

  for (const auto& stage : weakdx::Pipeline::stage_names()) {
    auto* cmd = app.add_subcommand(stage, "run the " + stage + " stage");
    add_common(cmd, opts);
  }
  auto* all = app.add_subcommand("all", "run the full pipeline");
  add_common(all, opts);
  auto* predict = app.add_subcommand("predict", "score letters with a model");
  add_common(predict, opts);
  predict->add_option("--model", model_path, "model JSON (default: out/model.json)");
  predict->add_option("--predictions", predictions_path,
                      "output CSV (default: out/predictions.csv)");

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    weakdx::Pipeline pipeline(load_config(opts));
    if (command == "all") {
      pipeline.run_all();
    } else if (command == "predict") {
      weakdx::InputVariant variant = opts.variant == "without_diagnosis"
                                         ? weakdx::InputVariant::without_diagnosis
                                         : weakdx::InputVariant::with_diagnosis;
      pipeline.predict(model_path, predictions_path, variant);
    } else {
      bool executed = pipeline.run_stage(command);
      if (!executed) std::fprintf(stderr, "%s: cached, nothing to do\n",
                                  command.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pipeline %s: %s\n", command.c_str(), e.what());
    return 1;
  }
  return 0;
}
