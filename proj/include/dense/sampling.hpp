#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dense/graph.hpp"
#include "dense/rng.hpp"

namespace dense {

struct Eviction {
  std::size_t epoch = 0;
  NodeId node = 0;
  bool operator==(const Eviction&) const = default;
};

/// A set of proximate nodes queried and supervised as one unit.
struct Bundle {
  std::size_t id = 0;
  NodeId core = 0;
  std::vector<NodeId> members;  // distinct, core included
  std::optional<ClassId> label;
  std::vector<Eviction> evicted;

  std::size_t size() const noexcept { return members.size(); }
  bool operator==(const Bundle&) const = default;
};

enum class SamplingCriterion { kTopological, kSemantic, kRandom };

SamplingCriterion parse_criterion(const std::string& name);
std::string to_string(SamplingCriterion c);

struct SamplingConfig {
  SamplingCriterion criterion = SamplingCriterion::kTopological;
  std::size_t bundle_size = 5;    // n_B
  std::size_t num_bundles = 100;  // n_S
  std::uint64_t seed = 0;
  std::size_t max_resample_attempts = 1000;

  void validate() const;
};

struct HopResult {
  std::size_t hops = 0;
  bool saturated = false;  // component exhausted before n_B - 1 neighbors were found
};

/// Smallest radius k whose k-hop neighborhood (core excluded) holds at least
/// bundle_size - 1 nodes. Throws SamplingError for an isolated core.
HopResult adaptive_hop(const Graph& graph, NodeId core, std::size_t bundle_size);

/// Core plus a uniform draw without replacement from the adaptive-hop neighborhood.
Bundle sample_topological(const Graph& graph, NodeId core, std::size_t bundle_size, Rng& rng);

/// Core plus its bundle_size - 1 nearest nodes in L2; ties go to the lower index.
Bundle sample_semantic(const EmbeddingMatrix& embeddings, NodeId core, std::size_t bundle_size);

/// Core plus bundle_size - 1 nodes drawn uniformly from the whole graph,
/// ignoring proximity. Ablation baseline.
Bundle sample_random(std::size_t num_nodes, NodeId core, std::size_t bundle_size, Rng& rng);

/// Draws cfg.num_bundles bundles with ids 0..n_S-1. Each bundle uses its own
/// RNG stream derived from (seed, id) so the result is order independent.
std::vector<Bundle> sample_bundles(const Graph& graph, const EmbeddingMatrix* embeddings,
                                   const SamplingConfig& cfg);

// Line-delimited JSON: {"id","core","members","label","evicted"} per bundle.
void save_bundles(const std::vector<Bundle>& bundles, const std::filesystem::path& path);
std::vector<Bundle> load_bundles(const std::filesystem::path& path);
std::string bundle_to_json_line(const Bundle& bundle);
Bundle bundle_from_json_line(const std::string& line);

}  // namespace dense
