#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dense/graph.hpp"
#include "dense/rng.hpp"
#include "dense/sampling.hpp"

namespace dense {

struct Prompt {
  std::size_t bundle_id = 0;
  std::string text;
  std::string sha256;  // lowercase hex of text
};

enum class AnnotatorKind { kOracle, kLlm };

std::string to_string(AnnotatorKind kind);
AnnotatorKind parse_annotator(const std::string& name);

struct AnnotationRecord {
  std::size_t bundle_id = 0;
  std::string prompt_sha256;
  std::string raw_response;
  std::optional<ClassId> label;  // nullopt marks a parse or transport failure
  std::size_t attempts = 1;
  AnnotatorKind annotator = AnnotatorKind::kOracle;
  std::string error;  // empty on success

  bool operator==(const AnnotationRecord&) const = default;
};

std::string record_to_json_line(const AnnotationRecord& record);
AnnotationRecord record_from_json_line(const std::string& line);

struct OracleConfig {
  double noise_rate = 0.0;  // probability of answering a wrong class
  std::uint64_t seed = 0;
  void validate() const;
};

struct LlmEndpointConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o";
  std::string api_key_env_var = "OPENAI_API_KEY";
  std::size_t max_retries = 2;
  double timeout_seconds = 60.0;
  std::size_t max_chars_per_item = 2000;
  std::size_t parallelism = 4;
  double retry_backoff_seconds = 0.5;  // doubled after every failed attempt
  void validate() const;
};

inline constexpr std::string_view kTruncationMarker = " [...]";
inline constexpr std::string_view kSystemInstruction =
    "You are an expert annotator. You read groups of text items and decide which single "
    "category most of them belong to.";
inline constexpr std::string_view kReaskSuffix = "\n\nAnswer with exactly one category name from the list, nothing else.";

std::string sha256_hex(std::string_view data);

/// Renders the bundle query: dataset description, numbered items, task.
Prompt build_prompt(const Bundle& bundle, const NodeTable& table, const std::string& dataset_description,
                    std::size_t max_chars_per_item = 2000);

/// Resolves a free-form reply to a class. Matching is case-insensitive and
/// longest-name-first; nullopt unless exactly one distinct class is named.
std::optional<ClassId> parse_response(std::string_view raw, const std::vector<std::string>& class_names);

/// Most frequent class among `labels`; ties go to the smallest class id.
ClassId mode_label(const std::vector<ClassId>& labels, std::size_t num_classes);

/// Returns `truth` with probability 1 - rho, otherwise a uniformly drawn different class.
ClassId noisy_answer(ClassId truth, std::size_t num_classes, double noise_rate, Rng& rng);

/// Simulated bundle query: the members' mode class, corrupted with the
/// configured noise. Deterministic in (cfg.seed, bundle.id).
ClassId annotate_oracle(const Bundle& bundle, const std::vector<ClassId>& labels, std::size_t num_classes,
                        const OracleConfig& cfg);

/// Simulated individual query for one node. Deterministic in (cfg.seed, node).
ClassId annotate_oracle_node(NodeId node, const std::vector<ClassId>& labels, std::size_t num_classes,
                             const OracleConfig& cfg);

/// Prompt-digest keyed store of annotation records, persisted as JSON lines.
/// Writes are serialized; safe to share between annotation workers.
class AnnotationCache {
 public:
  AnnotationCache() = default;  // in-memory only
  explicit AnnotationCache(std::filesystem::path path);

  std::optional<AnnotationRecord> lookup(const std::string& prompt_sha256) const;
  void store(const AnnotationRecord& record);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mutex_;
  std::map<std::string, AnnotationRecord> entries_;
};

/// One chat-completion round trip. Implementations throw TransportError.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual std::string complete(const std::string& system_message, const std::string& user_message) = 0;
};

/// POST {base_url}/chat/completions with a bearer token, temperature 0.
class HttpChatTransport : public ChatTransport {
 public:
  explicit HttpChatTransport(LlmEndpointConfig cfg);  // throws ConfigError if the key is missing
  std::string complete(const std::string& system_message, const std::string& user_message) override;

 private:
  LlmEndpointConfig cfg_;
  std::string api_key_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

/// Queries the annotator for one prompt, consulting `cache` first.
AnnotationRecord annotate_llm(const Prompt& prompt, const std::vector<std::string>& class_names,
                              const LlmEndpointConfig& cfg, AnnotationCache& cache, ChatTransport& transport);

struct AnnotationResult {
  std::vector<Bundle> bundles;  // label set where annotation succeeded
  std::vector<AnnotationRecord> records;  // one per bundle, in bundle order
  std::size_t labeled = 0;
  std::size_t failed = 0;
};

AnnotationResult annotate_all_oracle(std::vector<Bundle> bundles, const std::vector<ClassId>& labels,
                                     std::size_t num_classes, const OracleConfig& cfg);

AnnotationResult annotate_all_llm(std::vector<Bundle> bundles, const NodeTable& table,
                                  const std::string& dataset_description, const LlmEndpointConfig& cfg,
                                  AnnotationCache& cache, ChatTransport& transport);

void save_records(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path);

}  // namespace dense
