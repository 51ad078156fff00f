#include "dense/bench.hpp"

#include <cmath>
#include <memory>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "dense/error.hpp"
#include "dense/rng.hpp"

namespace dense {
namespace {

constexpr std::uint64_t kEdgeDomain = 0x65646765;     // "edge"
constexpr std::uint64_t kFeatureDomain = 0x66656174;  // "feat"

struct ReplicateData {
  Dataset data;
  std::vector<ClassId> labels;
};

ReplicateData load_replicate_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  ReplicateData out;
  if (cfg.files) {
    const auto& f = *cfg.files;
    out.data.graph = load_edge_list(f.edges);
    out.data.embeddings = load_embeddings(f.embeddings);
    out.data.table = load_node_table(f.nodes, f.class_names);
    out.data.description = f.description;
    if (out.data.embeddings.rows() != out.data.graph.num_nodes()) {
      throw ConfigError("embedding rows do not match the graph's node count");
    }
  } else {
    SbmConfig sbm = cfg.sbm;
    sbm.seed = seed;
    out.data = gen_sbm(sbm);
  }
  if (!out.data.table.labels || out.data.table.labels->size() != out.data.graph.num_nodes()) {
    throw ConfigError("experiments need ground-truth labels for every node");
  }
  out.labels = *out.data.table.labels;
  return out;
}

LossTerms terms_for(Variant v) {
  switch (v) {
    case Variant::kNoBundleEntropy:
      return {false, true, false};
    case Variant::kNoRanking:
    case Variant::kIndividualQuery:
      return {true, false, false};
    case Variant::kIndividualSupervision:
      return {false, true, true};
    default:
      return {true, true, false};
  }
}

// One singleton bundle per distinct node covered by the sampled bundles.
std::vector<Bundle> singleton_bundles(const std::vector<Bundle>& bundles) {
  std::set<NodeId> nodes;
  for (const auto& b : bundles) nodes.insert(b.members.begin(), b.members.end());
  std::vector<Bundle> out;
  for (NodeId v : nodes) {
    Bundle b;
    b.id = out.size();
    b.core = v;
    b.members = {v};
    out.push_back(std::move(b));
  }
  return out;
}

ReplicateResult run_replicate(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto rep = load_replicate_data(cfg, seed);
  const auto& data = rep.data;
  const std::size_t num_classes = data.table.num_classes();

  SamplingConfig sampling = cfg.sampling;
  sampling.seed = seed;
  if (cfg.variant == Variant::kRandomSampling) sampling.criterion = SamplingCriterion::kRandom;
  std::vector<Bundle> bundles = sample_bundles(data.graph, &data.embeddings, sampling);

  const bool individual_query = cfg.variant == Variant::kIndividualQuery;
  if (individual_query) bundles = singleton_bundles(bundles);

  OracleConfig oracle = cfg.oracle;
  oracle.seed = seed;
  AnnotationResult annotated;
  if (cfg.annotator == AnnotatorKind::kOracle) {
    if (individual_query) {
      for (auto& b : bundles) b.label = annotate_oracle_node(b.core, rep.labels, num_classes, oracle);
      annotated.labeled = bundles.size();
      annotated.bundles = std::move(bundles);
    } else {
      annotated = annotate_all_oracle(std::move(bundles), rep.labels, num_classes, oracle);
    }
  } else {
    auto cache = cfg.cache_path ? std::make_unique<AnnotationCache>(*cfg.cache_path)
                                : std::make_unique<AnnotationCache>();
    HttpChatTransport transport(cfg.llm);
    annotated = annotate_all_llm(std::move(bundles), data.table, data.description, cfg.llm, *cache, transport);
  }

  ReplicateResult result;
  result.seed = seed;
  result.queries = annotated.bundles.size();
  result.labeled = annotated.labeled;
  result.failed = annotated.failed;
  std::size_t agree = 0;
  for (const auto& b : annotated.bundles) {
    if (!b.label) continue;
    std::vector<ClassId> member_labels;
    for (NodeId m : b.members) member_labels.push_back(rep.labels[m]);
    if (*b.label == mode_label(member_labels, num_classes)) ++agree;
  }
  result.annotation_agreement =
      annotated.labeled ? static_cast<double>(agree) / static_cast<double>(annotated.labeled) : 0.0;
  if (annotated.labeled == 0) throw Error("replicate " + std::to_string(seed) + ": no bundle was labeled");

  TrainConfig train_cfg = cfg.train;
  train_cfg.seed = seed;
  train_cfg.terms = terms_for(cfg.variant);
  if (cfg.variant == Variant::kNoRefinement || individual_query) train_cfg.refine_enabled = false;

  GcnInput input(normalized_adjacency(data.graph), data.embeddings.data());
  auto trained = train(input, std::move(annotated.bundles), num_classes, train_cfg, &rep.labels);
  result.accuracy = *trained.report.accuracy;
  result.evictions = trained.report.events.size();
  result.final_loss = trained.report.final_loss;
  return result;
}

}  // namespace

void SbmConfig::validate() const {
  if (num_classes < 1 || num_nodes % num_classes != 0) {
    throw ConfigError("node count must be divisible by the class count");
  }
  if (!(0.0 <= p_in && p_in <= 1.0 && 0.0 <= p_out && p_out <= 1.0)) {
    throw ConfigError("edge probabilities must lie in [0, 1]");
  }
  if (num_classes > dim) throw ConfigError("embedding dimension must be at least the class count");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
}

Dataset gen_sbm(const SbmConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.num_nodes;
  const std::size_t block = n / cfg.num_classes;
  std::vector<ClassId> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i / block;

  Rng edge_rng = make_stream(cfg.seed, 0, kEdgeDomain);
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? cfg.p_in : cfg.p_out;
      if (uniform01(edge_rng) < p) edges.emplace_back(u, v);
    }
  }

  Rng feat_rng = make_stream(cfg.seed, 0, kFeatureDomain);
  Matrix x(n, cfg.dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cfg.dim; ++j) {
      const double mean = j == labels[i] ? cfg.separation : 0.0;
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mean + cfg.sigma * standard_normal(feat_rng);
    }
  }

  Dataset d;
  d.graph = Graph(n, edges);
  d.embeddings = EmbeddingMatrix(std::move(x));
  for (std::size_t c = 0; c < cfg.num_classes; ++c) d.table.class_names.push_back("class_" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) d.table.texts.push_back("synthetic node " + std::to_string(i));
  d.table.labels = std::move(labels);
  d.description = "A synthetic graph whose nodes are documents from " + std::to_string(cfg.num_classes) +
                  " categories.";
  return d;
}

double edge_homophily(const Graph& graph, const std::vector<ClassId>& labels) {
  if (graph.num_edges() == 0) return 0.0;
  std::size_t same = 0;
  for (auto [u, v] : graph.edges()) same += labels.at(u) == labels.at(v) ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(graph.num_edges());
}

Variant parse_variant(const std::string& name) {
  if (name == "full" || name == "bundle") return Variant::kFull;
  if (name == "random_sampling" || name == "V1") return Variant::kRandomSampling;
  if (name == "individual_query" || name == "individual" || name == "V2") return Variant::kIndividualQuery;
  if (name == "r_only" || name == "V3") return Variant::kNoBundleEntropy;
  if (name == "be_only" || name == "V4") return Variant::kNoRanking;
  if (name == "individual_supervision" || name == "V5") return Variant::kIndividualSupervision;
  if (name == "no_refine" || name == "V6") return Variant::kNoRefinement;
  throw ConfigError("unknown supervision mode '" + name + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kRandomSampling:
      return "random_sampling";
    case Variant::kIndividualQuery:
      return "individual_query";
    case Variant::kNoBundleEntropy:
      return "r_only";
    case Variant::kNoRanking:
      return "be_only";
    case Variant::kIndividualSupervision:
      return "individual_supervision";
    case Variant::kNoRefinement:
      return "no_refine";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  if (!files) sbm.validate();
  sampling.validate();
  oracle.validate();
  if (annotator == AnnotatorKind::kLlm) llm.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("at least one replicate seed is required");
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("sbm")) {
      const auto& s = j["sbm"];
      cfg.sbm.num_nodes = s.value("n", cfg.sbm.num_nodes);
      cfg.sbm.num_classes = s.value("classes", cfg.sbm.num_classes);
      cfg.sbm.p_in = s.value("p_in", cfg.sbm.p_in);
      cfg.sbm.p_out = s.value("p_out", cfg.sbm.p_out);
      cfg.sbm.dim = s.value("dim", cfg.sbm.dim);
      cfg.sbm.separation = s.value("separation", cfg.sbm.separation);
      cfg.sbm.sigma = s.value("sigma", cfg.sbm.sigma);
    }
    if (j.contains("files")) {
      const auto& f = j["files"];
      FileDataset fd;
      fd.edges = f.at("edges").get<std::string>();
      fd.embeddings = f.at("embeddings").get<std::string>();
      fd.nodes = f.at("nodes").get<std::string>();
      fd.class_names = f.at("class_names").get<std::vector<std::string>>();
      fd.description = f.value("description", std::string());
      cfg.files = std::move(fd);
    }
    if (j.contains("sampling")) {
      const auto& s = j["sampling"];
      cfg.sampling.criterion = parse_criterion(s.value("criterion", to_string(cfg.sampling.criterion)));
      cfg.sampling.bundle_size = s.value("bundle_size", cfg.sampling.bundle_size);
      cfg.sampling.num_bundles = s.value("num_bundles", cfg.sampling.num_bundles);
      cfg.sampling.max_resample_attempts = s.value("max_resample_attempts", cfg.sampling.max_resample_attempts);
    }
    if (j.contains("annotator")) {
      const auto& a = j["annotator"];
      cfg.annotator = parse_annotator(a.value("kind", to_string(cfg.annotator)));
      cfg.oracle.noise_rate = a.value("noise", cfg.oracle.noise_rate);
      cfg.llm.base_url = a.value("base_url", cfg.llm.base_url);
      cfg.llm.model = a.value("model", cfg.llm.model);
      cfg.llm.api_key_env_var = a.value("api_key_env_var", cfg.llm.api_key_env_var);
      cfg.llm.max_retries = a.value("max_retries", cfg.llm.max_retries);
      cfg.llm.timeout_seconds = a.value("timeout_seconds", cfg.llm.timeout_seconds);
      cfg.llm.max_chars_per_item = a.value("max_chars_per_item", cfg.llm.max_chars_per_item);
      cfg.llm.parallelism = a.value("parallelism", cfg.llm.parallelism);
      if (a.contains("cache")) cfg.cache_path = a["cache"].get<std::string>();
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      cfg.train.learning_rate = t.value("eta", cfg.train.learning_rate);
      cfg.train.eta_auto = t.value("eta_auto", cfg.train.eta_auto);
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.warmup_epochs = t.value("warmup", cfg.train.warmup_epochs);
      cfg.train.refine_every = t.value("refine_every", cfg.train.refine_every);
      cfg.train.bundle_floor = t.value("floor", cfg.train.bundle_floor);
      cfg.train.hidden_dim = t.value("hidden", cfg.train.hidden_dim);
    }
    if (j.contains("mode")) cfg.variant = parse_variant(j["mode"].get<std::string>());
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["sbm"] = {{"n", cfg.sbm.num_nodes},       {"classes", cfg.sbm.num_classes}, {"p_in", cfg.sbm.p_in},
              {"p_out", cfg.sbm.p_out},        {"dim", cfg.sbm.dim},            {"separation", cfg.sbm.separation},
              {"sigma", cfg.sbm.sigma}};
  if (cfg.files) {
    j["files"] = {{"edges", cfg.files->edges.string()},
                  {"embeddings", cfg.files->embeddings.string()},
                  {"nodes", cfg.files->nodes.string()},
                  {"class_names", cfg.files->class_names},
                  {"description", cfg.files->description}};
  }
  j["sampling"] = {{"criterion", to_string(cfg.sampling.criterion)},
                   {"bundle_size", cfg.sampling.bundle_size},
                   {"num_bundles", cfg.sampling.num_bundles},
                   {"max_resample_attempts", cfg.sampling.max_resample_attempts}};
  j["annotator"] = {{"kind", to_string(cfg.annotator)},
                    {"noise", cfg.oracle.noise_rate},
                    {"base_url", cfg.llm.base_url},
                    {"model", cfg.llm.model},
                    {"api_key_env_var", cfg.llm.api_key_env_var},
                    {"max_retries", cfg.llm.max_retries},
                    {"timeout_seconds", cfg.llm.timeout_seconds},
                    {"max_chars_per_item", cfg.llm.max_chars_per_item},
                    {"parallelism", cfg.llm.parallelism}};
  if (cfg.cache_path) j["annotator"]["cache"] = cfg.cache_path->string();
  j["train"] = {{"eta", cfg.train.learning_rate},     {"eta_auto", cfg.train.eta_auto},
                {"epochs", cfg.train.epochs},         {"warmup", cfg.train.warmup_epochs},
                {"refine_every", cfg.train.refine_every}, {"floor", cfg.train.bundle_floor},
                {"hidden", cfg.train.hidden_dim}};
  j["mode"] = to_string(cfg.variant);
  j["seeds"] = cfg.seeds;
  return j;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

ExperimentReport run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.variant = cfg.variant;
  std::vector<double> accs;
  for (auto seed : cfg.seeds) {
    report.replicates.push_back(run_replicate(cfg, seed));
    accs.push_back(report.replicates.back().accuracy);
  }
  report.mean_accuracy = mean_of(accs);
  report.std_accuracy = sample_std(accs);
  return report;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "n_B" || name == "bundle_size") return SweepAxis::kBundleSize;
  if (name == "n_S" || name == "num_bundles") return SweepAxis::kNumBundles;
  if (name == "rho" || name == "noise") return SweepAxis::kNoiseRate;
  throw ConfigError("unknown sweep axis '" + name + "'");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kBundleSize:
      return "bundle_size";
    case SweepAxis::kNumBundles:
      return "num_bundles";
    case SweepAxis::kNoiseRate:
      return "noise";
  }
  return "unknown";
}

std::vector<SweepRow> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep axis is empty");
  // Validate every point before running any of them.
  std::vector<ExperimentConfig> points;
  for (double v : values) {
    ExperimentConfig cfg = base;
    switch (axis) {
      case SweepAxis::kBundleSize:
      case SweepAxis::kNumBundles: {
        if (v < 0.0 || v != std::floor(v)) throw ConfigError("sweep value must be a non-negative integer");
        auto& target = axis == SweepAxis::kBundleSize ? cfg.sampling.bundle_size : cfg.sampling.num_bundles;
        target = static_cast<std::size_t>(v);
        break;
      }
      case SweepAxis::kNoiseRate:
        cfg.oracle.noise_rate = v;
        break;
    }
    cfg.validate();
    points.push_back(std::move(cfg));
  }
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto report = run_pipeline(points[k]);
    SweepRow row;
    row.value = values[k];
    for (const auto& r : report.replicates) row.per_seed.push_back(r.accuracy);
    row.mean = report.mean_accuracy;
    row.std = report.std_accuracy;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<QueryComparisonRow> compare_queries(const ExperimentConfig& cfg) {
  if (cfg.annotator != AnnotatorKind::kOracle) throw ConfigError("query comparison runs on the oracle annotator");
  ExperimentConfig bundle_cfg = cfg;
  bundle_cfg.variant = Variant::kFull;
  ExperimentConfig node_cfg = cfg;
  node_cfg.variant = Variant::kIndividualQuery;

  std::vector<QueryComparisonRow> rows;
  for (const auto* c : {&bundle_cfg, &node_cfg}) {
    const auto report = run_pipeline(*c);
    QueryComparisonRow row;
    row.query = c->variant == Variant::kFull ? "bundle" : "individual";
    std::size_t answers = 0;
    double agreed = 0.0;
    for (const auto& r : report.replicates) {
      answers += r.labeled;
      agreed += r.annotation_agreement * static_cast<double>(r.labeled);
    }
    row.agreement = answers ? agreed / static_cast<double>(answers) : 0.0;
    row.accuracy_mean = report.mean_accuracy;
    row.accuracy_std = report.std_accuracy;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dense
