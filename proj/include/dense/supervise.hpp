#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dense/gnn.hpp"
#include "dense/sampling.hpp"

namespace dense {

// ---- bundle losses ---------------------------------------------------------

/// softmax of the mean member logits.
Vector bundle_distribution(const Matrix& z, const Bundle& bundle);

/// Cross-entropy of the bundle distribution against the bundle label.
double loss_be(const Vector& pb, ClassId label);

/// -min(log pb[label] - log max_c pb[c], 0). Zero iff the label attains the max.
double loss_rank(const Vector& pb, ClassId label);

/// Which terms enter the objective. The full method is {entropy, ranking};
/// `individual` is the per-member cross-entropy baseline (1/|B|) sum CE(p_i, y).
struct LossTerms {
  bool bundle_entropy = true;
  bool ranking = true;
  bool individual = false;
};

struct LossValue {
  double total = 0.0;      // mean over labeled bundles
  double be_mean = 0.0;
  double rank_mean = 0.0;
  double ie_mean = 0.0;
  std::size_t labeled = 0;
  Matrix dz;     // d total / d Z
  Matrix dz_be;  // d (mean L_BE) / d Z
};

/// Mean objective over labeled bundles and its exact gradient with respect to
/// the logits. Ranking-loss subgradient: zero when the label attains the max,
/// otherwise the smallest-index maximizer is pushed down. Throws if no bundle
/// carries a label.
LossValue total_loss_and_grad(const Matrix& z, const std::vector<Bundle>& bundles, const LossTerms& terms = {});

// ---- refinement ------------------------------------------------------------

struct RefinementEvent {
  std::size_t epoch = 0;
  std::size_t bundle_id = 0;
  NodeId node = 0;
  bool operator==(const RefinementEvent&) const = default;
};

/// Evicts, from every labeled bundle, the members whose confidence in the
/// bundle label equals the bundle minimum. A bundle is left alone when the
/// eviction would take it below `floor` or when all confidences agree to 1e-12.
std::vector<RefinementEvent> refine(const Matrix& p, std::vector<Bundle>& bundles, std::size_t floor,
                                    std::size_t epoch);

// ---- training --------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 2000;
  std::size_t warmup_epochs = 50;
  std::size_t refine_every = 25;
  std::size_t bundle_floor = 2;
  bool refine_enabled = true;
  std::uint64_t seed = 0;
  bool eta_auto = false;
  double eta_auto_factor = 0.9;
  std::size_t probe_nodes = 5;
  std::size_t hidden_dim = 64;
  double stop_grad_norm = 0.0;  // stop early once ||dL/dtheta||_2 drops to this; 0 disables
  LossTerms terms;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double be_mean = 0.0;
  double rank_mean = 0.0;
  double ie_mean = 0.0;
  double grad_norm = 0.0;     // ||dL/dtheta||_2
  double be_grad_inf = 0.0;   // ||d mean(L_BE)/dtheta||_inf
  std::size_t evictions = 0;  // refinement evictions applied before this epoch's loss
  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<RefinementEvent> events;
  double eta = 0.0;
  double g_hat = 0.0;  // only estimated when eta_auto
  double m_hat = 0.0;
  std::size_t num_params = 0;
  double mean_bundle_size = 0.0;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;  // at theta_{T+1}
  std::optional<double> accuracy;

  bool operator==(const TrainReport&) const = default;
};

struct TrainResult {
  GcnParams params;
  TrainReport report;
  std::vector<Bundle> bundles;  // after refinement
};

/// Full-batch gradient descent on the bundle objective. When `labels` is
/// given, the final accuracy over all nodes is reported.
TrainResult train(const GcnInput& input, std::vector<Bundle> bundles, std::size_t num_classes,
                  const TrainConfig& cfg, const std::vector<ClassId>* labels = nullptr);

/// Learning rate factor * mean|B| / (n_d (M + G^2)).
double auto_learning_rate(double mean_bundle_size, std::size_t num_params, double g_hat, double m_hat,
                          double factor = 0.9);

/// Fraction of nodes whose arg-max logit (ties to the smallest class) equals the label.
double accuracy(const Matrix& z, const std::vector<ClassId>& labels);

/// JSON lines: one record per epoch, then a summary record with the events.
void save_report(const TrainReport& report, const std::filesystem::path& path);

}  // namespace dense
