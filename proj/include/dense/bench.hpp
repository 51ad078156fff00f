#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dense/annotate.hpp"
#include "dense/graph.hpp"
#include "dense/sampling.hpp"
#include "dense/supervise.hpp"

namespace dense {

/// Planted-partition graph with Gaussian class clusters as node features.
struct SbmConfig {
  std::size_t num_nodes = 400;
  std::size_t num_classes = 4;
  double p_in = 0.10;
  double p_out = 0.01;
  std::size_t dim = 16;
  double separation = 1.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  Graph graph;
  EmbeddingMatrix embeddings;
  NodeTable table;
  std::string description;
};

/// Nodes are split into contiguous balanced class blocks. Class c has mean
/// separation * e_c; features add N(0, sigma^2 I).
Dataset gen_sbm(const SbmConfig& cfg);

/// Fraction of edges joining nodes of the same class.
double edge_homophily(const Graph& graph, const std::vector<ClassId>& labels);

/// Ablation lattice. kFull is the complete method.
enum class Variant {
  kFull,
  kRandomSampling,          // V1: members drawn without regard to proximity
  kIndividualQuery,         // V2: one query per node, node-level cross-entropy
  kNoBundleEntropy,         // V3: ranking loss only
  kNoRanking,               // V4: bundle cross-entropy only
  kIndividualSupervision,   // V5: per-member cross-entropy against the bundle label
  kNoRefinement,            // V6
};

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct FileDataset {
  std::filesystem::path edges;
  std::filesystem::path embeddings;
  std::filesystem::path nodes;
  std::vector<std::string> class_names;
  std::string description;
};

struct ExperimentConfig {
  SbmConfig sbm;
  std::optional<FileDataset> files;  // overrides the synthetic source
  SamplingConfig sampling;
  AnnotatorKind annotator = AnnotatorKind::kOracle;
  OracleConfig oracle;
  LlmEndpointConfig llm;
  std::optional<std::filesystem::path> cache_path;
  TrainConfig train;
  Variant variant = Variant::kFull;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

  void validate() const;
};

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);

struct ReplicateResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::size_t queries = 0;
  std::size_t labeled = 0;
  std::size_t failed = 0;
  std::size_t evictions = 0;
  double annotation_agreement = 0.0;  // annotator answers matching the ground truth target
  double final_loss = 0.0;
  bool operator==(const ReplicateResult&) const = default;
};

struct ExperimentReport {
  Variant variant = Variant::kFull;
  std::vector<ReplicateResult> replicates;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation
};

/// Sampling, annotation, training and evaluation for every replicate seed.
ExperimentReport run_pipeline(const ExperimentConfig& cfg);

enum class SweepAxis { kBundleSize, kNumBundles, kNoiseRate };
SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepRow {
  double value = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> per_seed;
};

std::vector<SweepRow> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values);

struct QueryComparisonRow {
  std::string query;  // "bundle" or "individual"
  double agreement = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
};

/// Bundle query versus individual query under the noisy oracle: annotation
/// agreement with the ground truth and downstream accuracy of each.
std::vector<QueryComparisonRow> compare_queries(const ExperimentConfig& cfg);

double mean_of(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

}  // namespace dense
