#include "dense/sampling.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dense/error.hpp"

namespace dense {
namespace {

constexpr std::uint64_t kCoreDomain = 0x636f7265;    // "core"
constexpr std::uint64_t kMemberDomain = 0x6d656d62;  // "memb"

// Moves a uniform sample of `count` elements to the front of `pool`.
void partial_shuffle(std::vector<NodeId>& pool, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + uniform_index(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
}

}  // namespace

SamplingCriterion parse_criterion(const std::string& name) {
  if (name == "topological") return SamplingCriterion::kTopological;
  if (name == "semantic") return SamplingCriterion::kSemantic;
  if (name == "random") return SamplingCriterion::kRandom;
  throw ConfigError("unknown sampling criterion '" + name + "'");
}

std::string to_string(SamplingCriterion c) {
  switch (c) {
    case SamplingCriterion::kTopological:
      return "topological";
    case SamplingCriterion::kSemantic:
      return "semantic";
    case SamplingCriterion::kRandom:
      return "random";
  }
  return "unknown";
}

void SamplingConfig::validate() const {
  if (bundle_size < 2) throw ConfigError("bundle size must be >= 2, got " + std::to_string(bundle_size));
  if (num_bundles < 1) throw ConfigError("number of bundles must be >= 1");
}

HopResult adaptive_hop(const Graph& graph, NodeId core, std::size_t bundle_size) {
  if (bundle_size < 2) throw ConfigError("bundle size must be >= 2");
  const auto dist = hop_distances(graph, core);
  if (graph.degree(core) == 0) throw SamplingError("isolated core " + std::to_string(core));
  std::vector<std::size_t> per_layer;
  for (auto d : dist) {
    if (d == kUnreachable || d == 0) continue;
    if (per_layer.size() < d) per_layer.resize(d, 0);
    ++per_layer[d - 1];
  }
  const std::size_t need = bundle_size - 1;
  std::size_t reached = 0;
  for (std::size_t k = 0; k < per_layer.size(); ++k) {
    reached += per_layer[k];
    if (reached >= need) return {k + 1, false};
  }
  return {per_layer.size(), true};
}

Bundle sample_topological(const Graph& graph, NodeId core, std::size_t bundle_size, Rng& rng) {
  const auto hop = adaptive_hop(graph, core, bundle_size);
  const auto dist = hop_distances(graph, core);
  std::vector<NodeId> pool;
  for (NodeId v = 0; v < dist.size(); ++v) {
    if (dist[v] != kUnreachable && dist[v] >= 1 && dist[v] <= hop.hops) pool.push_back(v);
  }
  const std::size_t take = std::min(bundle_size - 1, pool.size());
  partial_shuffle(pool, take, rng);
  Bundle b;
  b.core = core;
  b.members.push_back(core);
  b.members.insert(b.members.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  return b;
}

Bundle sample_semantic(const EmbeddingMatrix& embeddings, NodeId core, std::size_t bundle_size) {
  const std::size_t n = embeddings.rows();
  if (bundle_size < 2) throw ConfigError("bundle size must be >= 2");
  if (core >= n) throw std::out_of_range("core out of range");
  if (n < bundle_size) {
    throw SamplingError("semantic sampling needs n >= bundle size (n=" + std::to_string(n) +
                        ", bundle size=" + std::to_string(bundle_size) + ")");
  }
  std::vector<std::pair<double, NodeId>> by_distance;
  by_distance.reserve(n - 1);
  const auto xc = embeddings.row(core);
  for (NodeId i = 0; i < n; ++i) {
    if (i == core) continue;
    by_distance.emplace_back((embeddings.row(i) - xc).squaredNorm(), i);
  }
  const auto k = static_cast<std::ptrdiff_t>(bundle_size - 1);
  std::partial_sort(by_distance.begin(), by_distance.begin() + k, by_distance.end());
  Bundle b;
  b.core = core;
  b.members.push_back(core);
  for (std::ptrdiff_t j = 0; j < k; ++j) b.members.push_back(by_distance[static_cast<std::size_t>(j)].second);
  return b;
}

Bundle sample_random(std::size_t num_nodes, NodeId core, std::size_t bundle_size, Rng& rng) {
  if (core >= num_nodes) throw std::out_of_range("core out of range");
  if (num_nodes < 2) throw SamplingError("random sampling needs at least two nodes");
  std::vector<NodeId> pool;
  pool.reserve(num_nodes - 1);
  for (NodeId v = 0; v < num_nodes; ++v) {
    if (v != core) pool.push_back(v);
  }
  const std::size_t take = std::min(bundle_size - 1, pool.size());
  partial_shuffle(pool, take, rng);
  Bundle b;
  b.core = core;
  b.members.push_back(core);
  b.members.insert(b.members.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  return b;
}

std::vector<Bundle> sample_bundles(const Graph& graph, const EmbeddingMatrix* embeddings,
                                   const SamplingConfig& cfg) {
  cfg.validate();
  const std::size_t n = graph.num_nodes();
  if (n == 0) throw SamplingError("cannot sample bundles from an empty graph");
  if (cfg.criterion == SamplingCriterion::kSemantic) {
    if (embeddings == nullptr) throw ConfigError("semantic sampling requires embeddings");
    if (embeddings->rows() != n) throw ConfigError("embedding rows do not match graph size");
  }

  // Without replacement: walk a random permutation; once it is used up (or
  // when n_S > n) fall back to independent uniform draws.
  Rng core_rng = make_stream(cfg.seed, 0, kCoreDomain);
  std::vector<NodeId> order;
  if (cfg.num_bundles <= n) {
    order.resize(n);
    std::iota(order.begin(), order.end(), NodeId{0});
    partial_shuffle(order, n, core_rng);
  }
  std::size_t next = 0;
  auto draw_core = [&]() -> NodeId {
    if (next < order.size()) return order[next++];
    return static_cast<NodeId>(uniform_index(core_rng, n));
  };

  std::vector<Bundle> bundles;
  bundles.reserve(cfg.num_bundles);
  std::size_t redraws = 0;
  while (bundles.size() < cfg.num_bundles) {
    const std::size_t id = bundles.size();
    const NodeId core = draw_core();
    Rng rng = make_stream(cfg.seed, id, kMemberDomain);
    try {
      Bundle b;
      switch (cfg.criterion) {
        case SamplingCriterion::kTopological:
          b = sample_topological(graph, core, cfg.bundle_size, rng);
          break;
        case SamplingCriterion::kSemantic:
          b = sample_semantic(*embeddings, core, cfg.bundle_size);
          break;
        case SamplingCriterion::kRandom:
          b = sample_random(n, core, cfg.bundle_size, rng);
          break;
      }
      b.id = id;
      bundles.push_back(std::move(b));
    } catch (const SamplingError&) {
      if (cfg.criterion == SamplingCriterion::kSemantic) throw;
      if (++redraws > cfg.max_resample_attempts) {
        throw SamplingError("redraw budget of " + std::to_string(cfg.max_resample_attempts) +
                            " exhausted after " + std::to_string(bundles.size()) + " of " +
                            std::to_string(cfg.num_bundles) + " bundles succeeded");
      }
    }
  }
  return bundles;
}

std::string bundle_to_json_line(const Bundle& bundle) {
  nlohmann::json rec;
  rec["id"] = bundle.id;
  rec["core"] = bundle.core;
  rec["members"] = bundle.members;
  rec["label"] = bundle.label ? nlohmann::json(*bundle.label) : nlohmann::json(nullptr);
  rec["evicted"] = nlohmann::json::array();
  for (const auto& e : bundle.evicted) rec["evicted"].push_back({e.epoch, e.node});
  return rec.dump();
}

Bundle bundle_from_json_line(const std::string& line) {
  auto rec = nlohmann::json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) throw ParseError("invalid bundle record");
  try {
    Bundle b;
    b.id = rec.at("id").get<std::size_t>();
    b.core = rec.at("core").get<NodeId>();
    b.members = rec.at("members").get<std::vector<NodeId>>();
    if (rec.contains("label") && !rec["label"].is_null()) b.label = rec["label"].get<ClassId>();
    if (rec.contains("evicted")) {
      for (const auto& e : rec["evicted"]) b.evicted.push_back({e.at(0).get<std::size_t>(), e.at(1).get<NodeId>()});
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bundle record: ") + e.what());
  }
}

void save_bundles(const std::vector<Bundle>& bundles, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& b : bundles) out << bundle_to_json_line(b) << '\n';
}

std::vector<Bundle> load_bundles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Bundle> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(bundle_from_json_line(line));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

}  // namespace dense
