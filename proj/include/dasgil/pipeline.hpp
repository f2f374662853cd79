#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dasgil/dataman.hpp"
#include "dasgil/digest.hpp"
#include "dasgil/evalbench.hpp"
#include "dasgil/net.hpp"
#include "dasgil/retrieval.hpp"
#include "dasgil/toyworld.hpp"
#include "dasgil/trainer.hpp"

namespace dasgil::pipeline {

struct EvalConfig {
  retrieval::Metric metric = retrieval::Metric::L1;
  bool normalize_l1 = false;
  bool concat_cosine = false;
  // Unset: the network's retrieval layers.
  std::optional<std::vector<int>> layers;
  // Virtual records of this environment form the database; empty takes every virtual record.
  std::string database_environment = "clone";
  double radius_m = 25.0;
  std::vector<int> recall_ns = eval::default_recall_ns();
  std::vector<double> distance_thresholds = eval::default_distance_thresholds();
  bool plots = false;

  retrieval::QueryOptions query_options() const { return {metric, normalize_l1, concat_cosine}; }
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct RunConfig {
  net::NetConfig net;
  train::TrainConfig train;
  toy::ToyWorldConfig toy;
  EvalConfig eval;
  std::string data_dir = "data";
  std::string out_dir = "out";

  // Checks every section and the cross-field rules; throws InvalidConfig.
  void validate() const;
  std::vector<int> retrieval_layers() const { return eval.layers.value_or(net.resolved().retrieval()); }
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Reads the optional config file, applies overrides in order, then validates.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);

// Settings sized for the generated toy world: 64x64 input, five encoder layers, distances scaled to the toy.
RunConfig toy_study_config();

// Single-layer index used by single-level variants on the toy configuration.
inline constexpr int kToySingleLayer = 4;

std::vector<std::string> training_variants();
std::vector<std::string> retrieval_variants();
bool is_retrieval_variant(const std::string& name);
// Returns the configuration for a named variant (InvalidConfig for unknown names).
RunConfig apply_variant(RunConfig base, const std::string& name);

Digest dataset_digest(const data::DatasetManifest& manifest);

// Virtual database records and real query records for evaluation.
std::vector<std::size_t> database_records(const data::DatasetManifest& manifest, const EvalConfig& cfg);
std::vector<std::size_t> query_records(const data::DatasetManifest& manifest);

// Localizes every real record against the virtual database and scores the retrievals.
eval::EvalReport evaluate_model(const net::ModelParams<float>& params, const data::DatasetManifest& manifest,
                                const EvalConfig& cfg, const std::vector<int>& layers);

struct ProbeResult {
  double train_accuracy = 0;
  double heldout_accuracy = 0;
  std::size_t train_count = 0;
  std::size_t heldout_count = 0;
};

// Fits a fresh logistic-regression domain classifier on frozen descriptors of real images and an equal number of
// virtual ones (each also mirrored), holding out half of the images of each domain.
ProbeResult domain_probe(const net::ModelParams<float>& params, const data::DatasetManifest& manifest,
                         const std::vector<int>& layers, std::uint64_t seed);

struct VariantOutcome {
  std::string name;
  eval::EvalReport report;
  std::vector<train::StepLog> log;
  double seconds = 0;
};

// Trains each training variant and evaluates it; retrieval variants reuse the base model with other layers.
// Writes <out>/<variant>/report.json and <out>/ablation.json.
std::vector<VariantOutcome> ablate(const RunConfig& base, const data::DatasetManifest& manifest,
                                   const std::vector<std::string>& variants, const std::filesystem::path& out_dir);

// One row of four panels: the input, a PCA colouring of `layer`, the finest predicted depth and the predicted
// segmentation, each at input resolution. `image` must match the network input size.
RgbImage visualize_sample(const net::ModelParams<float>& params, const RgbImage& image, int layer,
                          double max_depth_m = 60.0);

// Side-by-side plain-text table of the variant reports.
std::string ablation_table(const std::vector<VariantOutcome>& outcomes);

}  // namespace dasgil::pipeline
