#include "dense/annotate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dense/error.hpp"

namespace dense {
namespace {

constexpr std::uint64_t kBundleQueryDomain = 0x62756e64;  // "bund"
constexpr std::uint64_t kNodeQueryDomain = 0x6e6f6465;    // "node"

// Byte length of the first `max_chars` UTF-8 code points of s.
std::size_t utf8_prefix_bytes(std::string_view s, std::size_t max_chars) {
  std::size_t chars = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if ((c & 0xC0) != 0x80) {
      if (chars == max_chars) return i;
      ++chars;
    }
  }
  return s.size();
}

std::string join_class_names(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += ", ";
    out += names[i];
  }
  return out;
}

}  // namespace

std::string to_string(AnnotatorKind kind) { return kind == AnnotatorKind::kOracle ? "oracle" : "llm"; }

AnnotatorKind parse_annotator(const std::string& name) {
  if (name == "oracle") return AnnotatorKind::kOracle;
  if (name == "llm") return AnnotatorKind::kLlm;
  throw ConfigError("unknown annotator '" + name + "'");
}

std::string record_to_json_line(const AnnotationRecord& r) {
  nlohmann::json j;
  j["bundle_id"] = r.bundle_id;
  j["prompt_sha256"] = r.prompt_sha256;
  j["raw_response"] = r.raw_response;
  j["label"] = r.label ? nlohmann::json(*r.label) : nlohmann::json(nullptr);
  j["attempts"] = r.attempts;
  j["annotator"] = to_string(r.annotator);
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

AnnotationRecord record_from_json_line(const std::string& line) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("invalid annotation record");
  try {
    AnnotationRecord r;
    r.bundle_id = j.at("bundle_id").get<std::size_t>();
    r.prompt_sha256 = j.at("prompt_sha256").get<std::string>();
    r.raw_response = j.at("raw_response").get<std::string>();
    if (!j.at("label").is_null()) r.label = j["label"].get<ClassId>();
    r.attempts = j.at("attempts").get<std::size_t>();
    r.annotator = parse_annotator(j.at("annotator").get<std::string>());
    if (j.contains("error")) r.error = j["error"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("annotation record: ") + e.what());
  }
}

void OracleConfig::validate() const {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ConfigError("oracle noise rate must lie in [0, 1]");
}

void LlmEndpointConfig::validate() const {
  if (max_chars_per_item < 1) throw ConfigError("max_chars_per_item must be >= 1");
  if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
  if (base_url.empty()) throw ConfigError("base_url is empty");
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

Prompt build_prompt(const Bundle& bundle, const NodeTable& table, const std::string& dataset_description,
                    std::size_t max_chars_per_item) {
  if (max_chars_per_item < 1) throw ConfigError("max_chars_per_item must be >= 1");
  std::ostringstream out;
  out << dataset_description << "\n\n";
  out << "Here is a bundle of " << bundle.members.size() << " text items:\n";
  for (std::size_t k = 0; k < bundle.members.size(); ++k) {
    const NodeId node = bundle.members[k];
    if (node >= table.texts.size()) {
      throw ConfigError("bundle " + std::to_string(bundle.id) + " references node " + std::to_string(node) +
                        " with no table row");
    }
    std::string_view text = table.texts[node];
    out << "Item " << (k + 1) << ": ";
    if (text.empty()) {
      out << "(no text)";
    } else {
      const auto cut = utf8_prefix_bytes(text, max_chars_per_item);
      out << text.substr(0, cut);
      if (cut < text.size()) out << kTruncationMarker;
    }
    out << '\n';
  }
  out << "\nTask: Identify the single category that MOST of these items belong to. "
      << "The categories are: " << join_class_names(table.class_names) << ".\n"
      << "Answer with exactly one category name from the list above, nothing else.";
  Prompt p;
  p.bundle_id = bundle.id;
  p.text = out.str();
  p.sha256 = sha256_hex(p.text);
  return p;
}

std::optional<ClassId> parse_response(std::string_view raw, const std::vector<std::string>& class_names) {
  if (class_names.empty()) throw ConfigError("class list is empty");
  std::string hay = fold_case(raw);
  std::vector<ClassId> order(class_names.size());
  for (ClassId c = 0; c < order.size(); ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](ClassId a, ClassId b) {
    return class_names[a].size() > class_names[b].size();
  });
  std::optional<ClassId> found;
  for (ClassId c : order) {
    const std::string needle = fold_case(class_names[c]);
    if (needle.empty()) continue;
    bool hit = false;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos)) {
      hit = true;
      // Blank the match so shorter names nested inside it are not counted.
      std::fill_n(hay.begin() + static_cast<std::ptrdiff_t>(pos), needle.size(), '\0');
      pos += needle.size();
    }
    if (hit) {
      if (found && *found != c) return std::nullopt;
      found = c;
    }
  }
  return found;
}

ClassId mode_label(const std::vector<ClassId>& labels, std::size_t num_classes) {
  std::vector<std::size_t> hist(num_classes, 0);
  for (auto y : labels) ++hist.at(y);
  return static_cast<ClassId>(std::max_element(hist.begin(), hist.end()) - hist.begin());
}

ClassId noisy_answer(ClassId truth, std::size_t num_classes, double noise_rate, Rng& rng) {
  const double u = uniform01(rng);
  if (num_classes < 2 || u >= noise_rate) return truth;
  auto other = static_cast<ClassId>(uniform_index(rng, num_classes - 1));
  return other >= truth ? other + 1 : other;
}

ClassId annotate_oracle(const Bundle& bundle, const std::vector<ClassId>& labels, std::size_t num_classes,
                        const OracleConfig& cfg) {
  std::vector<ClassId> member_labels;
  member_labels.reserve(bundle.members.size());
  for (auto m : bundle.members) member_labels.push_back(labels.at(m));
  Rng rng = make_stream(cfg.seed, bundle.id, kBundleQueryDomain);
  return noisy_answer(mode_label(member_labels, num_classes), num_classes, cfg.noise_rate, rng);
}

ClassId annotate_oracle_node(NodeId node, const std::vector<ClassId>& labels, std::size_t num_classes,
                             const OracleConfig& cfg) {
  Rng rng = make_stream(cfg.seed, node, kNodeQueryDomain);
  return noisy_answer(labels.at(node), num_classes, cfg.noise_rate, rng);
}

AnnotationCache::AnnotationCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(*path_);
  if (!in) return;  // created on first store
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto r = record_from_json_line(line);
      entries_[r.prompt_sha256] = std::move(r);
    } catch (const ParseError& e) {
      throw ParseError(std::string("cache ") + path_->string() + ": " + e.what(), lineno);
    }
  }
}

std::optional<AnnotationRecord> AnnotationCache::lookup(const std::string& prompt_sha256) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(prompt_sha256);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void AnnotationCache::store(const AnnotationRecord& record) {
  std::lock_guard lock(mutex_);
  entries_[record.prompt_sha256] = record;
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    if (!out) throw Error("cannot append to cache " + path_->string());
    out << record_to_json_line(record) << '\n';
  }
}

std::size_t AnnotationCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

AnnotationRecord annotate_llm(const Prompt& prompt, const std::vector<std::string>& class_names,
                              const LlmEndpointConfig& cfg, AnnotationCache& cache, ChatTransport& transport) {
  if (auto hit = cache.lookup(prompt.sha256)) {
    hit->bundle_id = prompt.bundle_id;
    return *hit;
  }
  AnnotationRecord rec;
  rec.bundle_id = prompt.bundle_id;
  rec.prompt_sha256 = prompt.sha256;
  rec.annotator = AnnotatorKind::kLlm;
  rec.attempts = 0;
  bool transport_failed = false;
  double backoff = cfg.retry_backoff_seconds;
  for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0 && backoff > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    ++rec.attempts;
    const std::string user = attempt == 0 ? prompt.text : prompt.text + std::string(kReaskSuffix);
    try {
      rec.raw_response = transport.complete(std::string(kSystemInstruction), user);
      transport_failed = false;
    } catch (const TransportError& e) {
      transport_failed = true;
      rec.error = std::string("transport: ") + e.what();
      continue;
    }
    rec.label = parse_response(rec.raw_response, class_names);
    if (rec.label) {
      rec.error.clear();
      cache.store(rec);
      return rec;
    }
    rec.error = "unparseable response";
  }
  // Transport failures are not cached so a later run can retry them.
  if (!transport_failed) cache.store(rec);
  return rec;
}

AnnotationResult annotate_all_oracle(std::vector<Bundle> bundles, const std::vector<ClassId>& labels,
                                     std::size_t num_classes, const OracleConfig& cfg) {
  cfg.validate();
  AnnotationResult result;
  for (auto& b : bundles) {
    const ClassId y = annotate_oracle(b, labels, num_classes, cfg);
    b.label = y;
    AnnotationRecord rec;
    rec.bundle_id = b.id;
    rec.label = y;
    rec.attempts = 1;
    rec.annotator = AnnotatorKind::kOracle;
    rec.raw_response = std::to_string(y);
    result.records.push_back(std::move(rec));
    ++result.labeled;
  }
  result.bundles = std::move(bundles);
  return result;
}

AnnotationResult annotate_all_llm(std::vector<Bundle> bundles, const NodeTable& table,
                                  const std::string& dataset_description, const LlmEndpointConfig& cfg,
                                  AnnotationCache& cache, ChatTransport& transport) {
  cfg.validate();
  std::vector<Prompt> prompts;
  prompts.reserve(bundles.size());
  for (const auto& b : bundles) prompts.push_back(build_prompt(b, table, dataset_description, cfg.max_chars_per_item));

  std::vector<AnnotationRecord> records(bundles.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < bundles.size(); i = next++) {
      try {
        records[i] = annotate_llm(prompts[i], table.class_names, cfg, cache, transport);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(cfg.parallelism, std::max<std::size_t>(bundles.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  AnnotationResult result;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    bundles[i].label = records[i].label;
    if (records[i].label) {
      ++result.labeled;
    } else {
      ++result.failed;
    }
  }
  result.bundles = std::move(bundles);
  result.records = std::move(records);
  return result;
}

void save_records(const std::vector<AnnotationRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json_line(r) << '\n';
}

}  // namespace dense
