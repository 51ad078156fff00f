#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dense/annotate.hpp"
#include "dense/bench.hpp"
#include "dense/error.hpp"
#include "dense/gnn.hpp"
#include "dense/graph.hpp"
#include "dense/sampling.hpp"
#include "dense/supervise.hpp"
#include "dense/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_set = false;
  fs::path out = "out";
  std::optional<fs::path> config;
};

struct Vocabulary {
  std::vector<std::string> class_names;
  std::string description;
};

// Class names come from --classes (comma separated) or a meta.json written by gen-synth.
Vocabulary read_vocabulary(const std::vector<std::string>& classes, const std::optional<fs::path>& meta) {
  Vocabulary v;
  if (meta) {
    std::ifstream in(*meta);
    if (!in) throw dense::Error("cannot open " + meta->string());
    const auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw dense::ParseError("invalid meta file " + meta->string());
    v.class_names = j.at("class_names").get<std::vector<std::string>>();
    v.description = j.value("description", std::string());
  }
  if (!classes.empty()) v.class_names = classes;
  if (v.class_names.empty()) throw dense::ConfigError("class names are required (--classes or --meta)");
  return v;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw dense::Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

dense::ExperimentConfig load_experiment(const Globals& g) {
  dense::ExperimentConfig cfg;
  if (g.config) {
    std::ifstream in(*g.config);
    if (!in) throw dense::Error("cannot open " + g.config->string());
    const auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw dense::ParseError("invalid config file " + g.config->string());
    cfg = dense::experiment_from_json(j);
  }
  return cfg;
}

json replicate_json(const dense::ReplicateResult& r) {
  return {{"type", "replicate"},      {"seed", r.seed},         {"accuracy", r.accuracy},
          {"queries", r.queries},     {"labeled", r.labeled},   {"failed", r.failed},
          {"evictions", r.evictions}, {"annotation_agreement", r.annotation_agreement},
          {"final_loss", r.final_loss}};
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < count; ++k) seeds.push_back(first + k);
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot node classification from bundle-level annotations"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Generate a planted-partition benchmark graph");
  dense::SbmConfig sbm;
  gen->add_option("--n", sbm.num_nodes, "Node count");
  gen->add_option("--classes", sbm.num_classes, "Class count");
  gen->add_option("--p-in", sbm.p_in, "Intra-class edge probability");
  gen->add_option("--p-out", sbm.p_out, "Inter-class edge probability");
  gen->add_option("--dim", sbm.dim, "Embedding dimension");
  gen->add_option("--separation", sbm.separation, "Distance of class means from the origin");
  gen->add_option("--sigma", sbm.sigma, "Within-class noise std");

  // sample-bundles
  auto* samp = app.add_subcommand("sample-bundles", "Sample node bundles");
  fs::path graph_path, emb_path;
  std::string criterion = "topological";
  dense::SamplingConfig sampling;
  samp->add_option("--graph", graph_path, "Edge list")->required()->check(CLI::ExistingFile);
  samp->add_option("--embeddings", emb_path, "Embedding matrix")->check(CLI::ExistingFile);
  samp->add_option("--criterion", criterion, "topological | semantic | random");
  samp->add_option("--bundle-size", sampling.bundle_size, "Nodes per bundle");
  samp->add_option("--num-bundles", sampling.num_bundles, "Bundle count");

  // annotate
  auto* ann = app.add_subcommand("annotate", "Label bundles with their mode category");
  fs::path bundles_path, nodes_path;
  std::optional<fs::path> meta_path, cache_path;
  std::vector<std::string> classes;
  std::string annotator = "oracle";
  std::optional<std::string> description;
  dense::OracleConfig oracle;
  dense::LlmEndpointConfig llm;
  ann->add_option("--bundles", bundles_path, "Bundle file")->required()->check(CLI::ExistingFile);
  ann->add_option("--nodes", nodes_path, "Node table")->required()->check(CLI::ExistingFile);
  ann->add_option("--classes", classes, "Class names")->delimiter(',');
  ann->add_option("--meta", meta_path, "meta.json with class names and description")->check(CLI::ExistingFile);
  ann->add_option("--description", description, "Dataset description placed in the prompt");
  ann->add_option("--annotator", annotator, "oracle | llm");
  ann->add_option("--noise", oracle.noise_rate, "Oracle noise rate");
  ann->add_option("--model", llm.model, "Chat model name");
  ann->add_option("--base-url", llm.base_url, "Chat-completion endpoint base URL");
  ann->add_option("--api-key-env", llm.api_key_env_var, "Environment variable holding the API key");
  ann->add_option("--max-retries", llm.max_retries, "Re-asks after an unparseable answer");
  ann->add_option("--parallelism", llm.parallelism, "Concurrent requests");
  ann->add_option("--cache", cache_path, "Annotation cache (JSON lines)");

  // train
  auto* tr = app.add_subcommand("train", "Train the GCN on labeled bundles");
  fs::path train_graph, train_emb, train_bundles;
  dense::TrainConfig train_cfg;
  std::optional<fs::path> train_nodes;
  tr->add_option("--graph", train_graph, "Edge list")->required()->check(CLI::ExistingFile);
  tr->add_option("--embeddings", train_emb, "Embedding matrix")->required()->check(CLI::ExistingFile);
  tr->add_option("--bundles", train_bundles, "Labeled bundle file")->required()->check(CLI::ExistingFile);
  auto* eta_opt = tr->add_option("--eta", train_cfg.learning_rate, "Learning rate");
  tr->add_flag("--eta-auto", train_cfg.eta_auto, "Derive the learning rate from derivative estimates")
      ->excludes(eta_opt);
  tr->add_option("--epochs", train_cfg.epochs, "Epochs");
  tr->add_option("--warmup", train_cfg.warmup_epochs, "Epochs before the first refinement");
  tr->add_option("--refine-every", train_cfg.refine_every, "Epochs between refinements");
  tr->add_option("--floor", train_cfg.bundle_floor, "Minimum bundle size");
  tr->add_option("--hidden", train_cfg.hidden_dim, "Hidden width");
  bool no_refine = false;
  tr->add_flag("--no-refine", no_refine, "Disable bundle refinement");
  tr->add_option("--nodes", train_nodes, "Node table with labels, for reporting accuracy")
      ->check(CLI::ExistingFile);
  tr->add_option("--classes", classes, "Class names")->delimiter(',');
  tr->add_option("--meta", meta_path, "meta.json with class names")->check(CLI::ExistingFile);

  // eval
  auto* ev = app.add_subcommand("eval", "Accuracy of trained parameters");
  fs::path eval_params;
  ev->add_option("--graph", graph_path, "Edge list")->required()->check(CLI::ExistingFile);
  ev->add_option("--embeddings", emb_path, "Embedding matrix")->required()->check(CLI::ExistingFile);
  ev->add_option("--params", eval_params, "Parameter directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--nodes", nodes_path, "Node table with labels")->required()->check(CLI::ExistingFile);
  ev->add_option("--classes", classes, "Class names")->delimiter(',');
  ev->add_option("--meta", meta_path, "meta.json with class names")->check(CLI::ExistingFile);

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Sample, annotate, train and evaluate over replicate seeds");
  std::optional<std::string> mode;
  std::optional<double> pipe_noise;
  std::optional<std::size_t> num_seeds;
  bool compare = false;
  pipe->add_option("--mode", mode, "full | random_sampling | individual_query | r_only | be_only | "
                                   "individual_supervision | no_refine (or bundle, individual, V1..V6)");
  pipe->add_option("--noise", pipe_noise, "Oracle noise rate");
  pipe->add_option("--seeds", num_seeds, "Replicate count, starting at --seed");
  pipe->add_flag("--compare-queries", compare, "Compare bundle and individual queries instead");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run the pipeline along one configuration axis");
  std::string axis;
  std::vector<double> values;
  sw->add_option("--axis", axis, "bundle_size | num_bundles | noise (or n_B, n_S, rho)")->required();
  sw->add_option("--values", values, "Axis values")->required()->delimiter(',');
  sw->add_option("--mode", mode, "Supervision mode");
  sw->add_option("--noise", pipe_noise, "Oracle noise rate");
  sw->add_option("--seeds", num_seeds, "Replicate count, starting at --seed");

  // verify
  auto* ver = app.add_subcommand("verify", "Numerical checks of the method's theoretical claims");
  int theorem = 1;
  std::optional<std::size_t> trials;
  ver->add_option("--theorem", theorem, "1 | 2 | 3")->required()->check(CLI::IsMember({1, 2, 3}));
  ver->add_option("--trials", trials, "Kept trials (1), random points (2) or max epochs (3)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      sbm.seed = g.seed;
      const auto data = dense::gen_sbm(sbm);
      fs::create_directories(g.out);
      dense::save_edge_list(data.graph, g.out / "edges.txt");
      dense::save_embeddings(data.embeddings, g.out / "embeddings.txt");
      dense::save_node_table(data.table, g.out / "nodes.jsonl");
      write_json({{"class_names", data.table.class_names},
                  {"description", data.description},
                  {"seed", g.seed},
                  {"homophily", dense::edge_homophily(data.graph, *data.table.labels)}},
                 g.out / "meta.json");
      std::cout << "generated " << data.graph.num_nodes() << " nodes, " << data.graph.num_edges()
                << " edges in " << g.out << "\n";
    } else if (samp->parsed()) {
      sampling.seed = g.seed;
      sampling.criterion = dense::parse_criterion(criterion);
      const auto graph = dense::load_edge_list(graph_path);
      std::optional<dense::EmbeddingMatrix> emb;
      if (!emb_path.empty()) emb = dense::load_embeddings(emb_path);
      const auto bundles = dense::sample_bundles(graph, emb ? &*emb : nullptr, sampling);
      fs::create_directories(g.out);
      dense::save_bundles(bundles, g.out / "bundles.jsonl");
      std::cout << "sampled " << bundles.size() << " bundles into " << (g.out / "bundles.jsonl") << "\n";
    } else if (ann->parsed()) {
      const auto vocab = read_vocabulary(classes, meta_path);
      const auto table = dense::load_node_table(nodes_path, vocab.class_names);
      auto bundles = dense::load_bundles(bundles_path);
      dense::AnnotationResult result;
      if (dense::parse_annotator(annotator) == dense::AnnotatorKind::kOracle) {
        if (!table.labels) throw dense::ConfigError("the oracle annotator needs node labels");
        oracle.seed = g.seed;
        result = dense::annotate_all_oracle(std::move(bundles), *table.labels, table.num_classes(), oracle);
      } else {
        auto cache = cache_path ? std::make_unique<dense::AnnotationCache>(*cache_path)
                                : std::make_unique<dense::AnnotationCache>();
        dense::HttpChatTransport transport(llm);
        result = dense::annotate_all_llm(std::move(bundles), table, description.value_or(vocab.description), llm,
                                         *cache, transport);
      }
      fs::create_directories(g.out);
      dense::save_bundles(result.bundles, g.out / "labeled_bundles.jsonl");
      dense::save_records(result.records, g.out / "annotations.jsonl");
      std::cout << "labeled " << result.labeled << " of " << result.bundles.size() << " bundles ("
                << result.failed << " failed)\n";
    } else if (tr->parsed()) {
      if (g.seed_set) train_cfg.seed = g.seed;
      if (no_refine) train_cfg.refine_enabled = false;
      const auto graph = dense::load_edge_list(train_graph);
      const auto emb = dense::load_embeddings(train_emb);
      auto bundles = dense::load_bundles(train_bundles);
      std::size_t num_classes = 0;
      std::optional<std::vector<dense::ClassId>> labels;
      if (train_nodes) {
        const auto vocab = read_vocabulary(classes, meta_path);
        labels = dense::load_node_table(*train_nodes, vocab.class_names).labels;
        num_classes = vocab.class_names.size();
      } else if (!classes.empty() || meta_path) {
        num_classes = read_vocabulary(classes, meta_path).class_names.size();
      } else {
        for (const auto& b : bundles) {
          if (b.label) num_classes = std::max(num_classes, *b.label + 1);
        }
      }
      dense::GcnInput input(dense::normalized_adjacency(graph), emb.data());
      const auto result = dense::train(input, std::move(bundles), num_classes, train_cfg, labels ? &*labels : nullptr);
      fs::create_directories(g.out);
      dense::save_params(result.params, train_cfg.seed, g.out / "params");
      dense::save_report(result.report, g.out / "train_report.jsonl");
      dense::save_bundles(result.bundles, g.out / "refined_bundles.jsonl");
      std::cout << "trained " << result.report.epochs.size() << " epochs, eta " << result.report.eta
                << ", final loss " << result.report.final_loss << ", grad norm "
                << result.report.final_grad_norm << ", " << result.report.events.size() << " evictions";
      if (result.report.accuracy) std::cout << ", accuracy " << *result.report.accuracy;
      std::cout << "\n";
    } else if (ev->parsed()) {
      const auto vocab = read_vocabulary(classes, meta_path);
      const auto table = dense::load_node_table(nodes_path, vocab.class_names);
      if (!table.labels) throw dense::ConfigError("evaluation needs node labels");
      const auto graph = dense::load_edge_list(graph_path);
      const auto emb = dense::load_embeddings(emb_path);
      const auto params = dense::load_params(eval_params);
      const auto trace = dense::forward(params, dense::normalized_adjacency(graph), emb);
      const double acc = dense::accuracy(trace.z, *table.labels);
      std::cout << json{{"accuracy", acc}, {"nodes", table.texts.size()}}.dump() << "\n";
    } else if (pipe->parsed() || sw->parsed()) {
      auto cfg = load_experiment(g);
      if (mode) cfg.variant = dense::parse_variant(*mode);
      if (pipe_noise) cfg.oracle.noise_rate = *pipe_noise;
      if (num_seeds) cfg.seeds = seed_range(g.seed, *num_seeds);
      else if (g.seed_set) cfg.seeds = seed_range(g.seed, cfg.seeds.size());
      fs::create_directories(g.out);
      if (pipe->parsed() && compare) {
        const auto rows = dense::compare_queries(cfg);
        std::ofstream out(g.out / "query_comparison.jsonl");
        std::cout << "query       agreement  accuracy\n";
        for (const auto& r : rows) {
          out << json{{"query", r.query}, {"agreement", r.agreement}, {"accuracy_mean", r.accuracy_mean},
                      {"accuracy_std", r.accuracy_std}}.dump()
              << '\n';
          std::cout << r.query << std::string(12 - r.query.size(), ' ') << r.agreement << "  " << r.accuracy_mean
                    << " +/- " << r.accuracy_std << "\n";
        }
      } else if (pipe->parsed()) {
        const auto report = dense::run_pipeline(cfg);
        std::ofstream out(g.out / "pipeline.jsonl");
        for (const auto& r : report.replicates) out << replicate_json(r).dump() << '\n';
        out << json{{"type", "summary"}, {"mode", dense::to_string(report.variant)},
                    {"mean_accuracy", report.mean_accuracy}, {"std_accuracy", report.std_accuracy},
                    {"replicates", report.replicates.size()}, {"config", dense::experiment_to_json(cfg)}}
                   .dump()
            << '\n';
        std::cout << "mode " << dense::to_string(report.variant) << ": accuracy " << report.mean_accuracy
                  << " +/- " << report.std_accuracy << " over " << report.replicates.size() << " seeds\n";
      } else {
        const auto ax = dense::parse_sweep_axis(axis);
        const auto rows = dense::sweep(cfg, ax, values);
        std::ofstream out(g.out / "sweep.jsonl");
        std::cout << dense::to_string(ax) << "  mean  std\n";
        for (const auto& r : rows) {
          out << json{{"axis", dense::to_string(ax)}, {"value", r.value}, {"mean", r.mean}, {"std", r.std},
                      {"per_seed", r.per_seed}}.dump()
              << '\n';
          std::cout << r.value << "  " << r.mean << "  " << r.std << "\n";
        }
      }
    } else if (ver->parsed()) {
      json out;
      bool ok = false;
      if (theorem == 1) {
        const auto r = dense::verify_theorem1(trials.value_or(10000), 5, 5, g.seed);
        out = {{"theorem", 1},          {"draws", r.draws},
               {"kept", r.kept},        {"passed", r.passed},
               {"pass_fraction", r.pass_fraction}, {"max_violation", r.max_violation},
               {"min_margin", r.min_margin}};
        ok = r.pass_fraction == 1.0;
      } else if (theorem == 2) {
        const auto r = dense::verify_theorem2(trials.value_or(10), g.seed);
        out = {{"theorem", 2},
               {"num_params", r.num_params},
               {"bundle_size", r.bundle_size},
               {"smoothness_constant", r.smoothness_constant},
               {"max_observed_lipschitz", r.max_observed_lipschitz},
               {"gradient_bound_holds", r.all_grad_ok},
               {"hessian_bound_holds", r.all_hess_ok},
               {"lipschitz_bound_holds", r.lipschitz_ok}};
        for (const auto& p : r.points) {
          out["points"].push_back({{"zero_point", p.zero_point}, {"g_hat", p.g_hat}, {"m_hat", p.m_hat},
                                   {"grad_inf", p.grad_inf}, {"grad_bound", p.grad_bound},
                                   {"direct_grad_bound", p.direct_grad_bound}, {"hess_max", p.hess_max},
                                   {"hess_bound", p.hess_bound}});
        }
        ok = r.all_grad_ok && r.all_hess_ok;
      } else {
        const auto r = dense::verify_theorem3(g.seed, trials.value_or(5000));
        out = {{"theorem", 3},
               {"epochs_run", r.epochs_run},
               {"eta", r.eta},
               {"g_hat", r.g_hat},
               {"m_hat", r.m_hat},
               {"first_loss", r.first_loss},
               {"final_loss", r.final_loss},
               {"max_increase", r.max_increase},
               {"final_grad_norm", r.final_grad_norm},
               {"monotone", r.monotone},
               {"converged", r.converged},
               {"refine_events", r.refine_events},
               {"refine_max_increase", r.refine_max_increase},
               {"refine_monotone", r.refine_monotone}};
        ok = r.monotone && r.converged && r.refine_monotone;
      }
      std::cout << out.dump(2) << "\n" << (ok ? "PASS" : "FAIL") << "\n";
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
