#include "dense/supervise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dense/error.hpp"

namespace dense {
namespace {

Vector mean_logits(const Matrix& z, const Bundle& bundle) {
  if (bundle.members.empty()) throw ConfigError("bundle " + std::to_string(bundle.id) + " is empty");
  // Summing in node order makes the result bit-identical under member permutation.
  std::vector<NodeId> order = bundle.members;
  std::sort(order.begin(), order.end());
  Vector sum = Vector::Zero(z.cols());
  for (NodeId m : order) {
    if (m >= static_cast<NodeId>(z.rows())) throw ConfigError("bundle member out of range");
    sum += z.row(static_cast<Eigen::Index>(m)).transpose();
  }
  return sum / static_cast<double>(bundle.members.size());
}

Vector log_softmax(const Vector& z) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return z.array() - lse;
}

ClassId argmax_first(const Eigen::Ref<const Vector>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < v.size(); ++c) {
    if (v(c) > v(best)) best = c;
  }
  return static_cast<ClassId>(best);
}

bool is_refine_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.refine_enabled && epoch > cfg.warmup_epochs && (epoch - cfg.warmup_epochs) % cfg.refine_every == 0;
}

}  // namespace

Vector bundle_distribution(const Matrix& z, const Bundle& bundle) { return softmax_row(mean_logits(z, bundle)); }

double loss_be(const Vector& pb, ClassId label) { return -std::log(pb(static_cast<Eigen::Index>(label))); }

double loss_rank(const Vector& pb, ClassId label) {
  const double gap = std::log(pb(static_cast<Eigen::Index>(label))) - std::log(pb.maxCoeff());
  return -std::min(gap, 0.0);
}

LossValue total_loss_and_grad(const Matrix& z, const std::vector<Bundle>& bundles, const LossTerms& terms) {
  LossValue out;
  out.dz = Matrix::Zero(z.rows(), z.cols());
  out.dz_be = Matrix::Zero(z.rows(), z.cols());
  for (const auto& b : bundles) {
    if (b.label) ++out.labeled;
  }
  if (out.labeled == 0) throw ConfigError("no labeled bundles to supervise");
  const double scale = 1.0 / static_cast<double>(out.labeled);

  for (const auto& b : bundles) {
    if (!b.label) continue;
    const auto y = static_cast<Eigen::Index>(*b.label);
    if (y >= z.cols()) throw ConfigError("bundle label out of range");
    const double inv_size = 1.0 / static_cast<double>(b.members.size());
    const Vector logp = log_softmax(mean_logits(z, b));
    const Vector q = logp.array().exp();

    const double be = -logp(y);
    Vector g_be = q;
    g_be(y) -= 1.0;
    for (NodeId m : b.members) out.dz_be.row(static_cast<Eigen::Index>(m)) += (scale * inv_size) * g_be.transpose();
    out.be_mean += scale * be;

    Vector g_member = Vector::Zero(z.cols());
    double total = 0.0;
    if (terms.bundle_entropy) {
      total += be;
      g_member += g_be;
    }
    if (terms.ranking) {
      const double rank = logp.maxCoeff() - logp(y);
      out.rank_mean += scale * rank;
      total += rank;
      if (rank > 0.0) {
        const auto top = static_cast<Eigen::Index>(argmax_first(logp));
        g_member(top) += 1.0;
        g_member(y) -= 1.0;
      }
    }
    for (NodeId m : b.members) out.dz.row(static_cast<Eigen::Index>(m)) += (scale * inv_size) * g_member.transpose();

    if (terms.individual) {
      double ie = 0.0;
      for (NodeId m : b.members) {
        const auto row = static_cast<Eigen::Index>(m);
        const Vector lp = log_softmax(z.row(row).transpose());
        ie -= inv_size * lp(y);
        Vector g = lp.array().exp();
        g(y) -= 1.0;
        out.dz.row(row) += (scale * inv_size) * g.transpose();
      }
      out.ie_mean += scale * ie;
      total += ie;
    }
    out.total += scale * total;
  }
  return out;
}

std::vector<RefinementEvent> refine(const Matrix& p, std::vector<Bundle>& bundles, std::size_t floor,
                                    std::size_t epoch) {
  std::vector<RefinementEvent> events;
  for (auto& b : bundles) {
    if (!b.label || b.members.empty()) continue;
    const auto y = static_cast<Eigen::Index>(*b.label);
    std::vector<double> conf;
    conf.reserve(b.members.size());
    for (NodeId m : b.members) conf.push_back(p(static_cast<Eigen::Index>(m), y));
    const auto [lo, hi] = std::minmax_element(conf.begin(), conf.end());
    if (*hi - *lo <= 1e-12) continue;
    const double least = *lo;
    const auto keep = static_cast<std::size_t>(std::count_if(conf.begin(), conf.end(), [&](double c) { return c > least; }));
    if (keep < floor) continue;
    std::vector<NodeId> survivors;
    survivors.reserve(keep);
    for (std::size_t k = 0; k < b.members.size(); ++k) {
      if (conf[k] > least) {
        survivors.push_back(b.members[k]);
      } else {
        b.evicted.push_back({epoch, b.members[k]});
        events.push_back({epoch, b.id, b.members[k]});
      }
    }
    b.members = std::move(survivors);
  }
  return events;
}

void TrainConfig::validate() const {
  if (!eta_auto && !(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (bundle_floor < 2) throw ConfigError("bundle floor must be >= 2");
  if (refine_every < 1) throw ConfigError("refine_every must be >= 1");
  if (hidden_dim < 1) throw ConfigError("hidden width must be >= 1");
  if (!terms.bundle_entropy && !terms.ranking && !terms.individual) throw ConfigError("objective has no terms");
}

double auto_learning_rate(double mean_bundle_size, std::size_t num_params, double g_hat, double m_hat,
                          double factor) {
  return factor * mean_bundle_size / (static_cast<double>(num_params) * (m_hat + g_hat * g_hat));
}

double accuracy(const Matrix& z, const std::vector<ClassId>& labels) {
  if (static_cast<std::size_t>(z.rows()) != labels.size()) throw ConfigError("labels do not cover all nodes");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (argmax_first(z.row(i).transpose()) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

TrainResult train(const GcnInput& input, std::vector<Bundle> bundles, std::size_t num_classes,
                  const TrainConfig& cfg, const std::vector<ClassId>* labels) {
  cfg.validate();
  TrainResult result;
  auto& report = result.report;
  GcnParams params = init_params(input.x.cols(), cfg.hidden_dim, num_classes, cfg.seed);
  report.num_params = params.num_params();

  std::size_t labeled = 0;
  double size_sum = 0.0;
  std::vector<NodeId> probe;
  for (const auto& b : bundles) {
    if (!b.label) continue;
    ++labeled;
    size_sum += static_cast<double>(b.members.size());
    for (NodeId m : b.members) {
      if (probe.size() < cfg.probe_nodes && std::find(probe.begin(), probe.end(), m) == probe.end()) {
        probe.push_back(m);
      }
    }
  }
  if (labeled == 0) throw ConfigError("training needs at least one labeled bundle");
  report.mean_bundle_size = size_sum / static_cast<double>(labeled);

  report.eta = cfg.learning_rate;
  if (cfg.eta_auto) {
    const auto bounds = estimate_logit_bounds(params, input, probe);
    report.g_hat = bounds.g;
    report.m_hat = bounds.m;
    report.eta = auto_learning_rate(report.mean_bundle_size, report.num_params, bounds.g, bounds.m,
                                    cfg.eta_auto_factor);
  }

  Vector theta = params.flatten();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const ForwardTrace trace = forward(params, input);
    EpochRecord rec;
    rec.epoch = epoch;
    if (is_refine_epoch(cfg, epoch)) {
      auto events = refine(trace.p, bundles, cfg.bundle_floor, epoch);
      rec.evictions = events.size();
      report.events.insert(report.events.end(), events.begin(), events.end());
    }
    const LossValue loss = total_loss_and_grad(trace.z, bundles, cfg.terms);
    if (!std::isfinite(loss.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at epoch " << epoch << " with learning rate " << report.eta;
      throw TrainingError(msg.str());
    }
    const GcnParams grad = backward(params, input, trace, loss.dz);
    const Vector g = grad.flatten();
    rec.loss = loss.total;
    rec.be_mean = loss.be_mean;
    rec.rank_mean = loss.rank_mean;
    rec.ie_mean = loss.ie_mean;
    rec.grad_norm = g.norm();
    rec.be_grad_inf = backward(params, input, trace, loss.dz_be).flatten().cwiseAbs().maxCoeff();
    report.epochs.push_back(rec);
    if (cfg.stop_grad_norm > 0.0 && rec.grad_norm <= cfg.stop_grad_norm) break;

    theta -= report.eta * g;
    params.assign(theta);
  }

  const ForwardTrace final_trace = forward(params, input);
  const LossValue final_loss = total_loss_and_grad(final_trace.z, bundles, cfg.terms);
  report.final_loss = final_loss.total;
  report.final_grad_norm = backward(params, input, final_trace, final_loss.dz).flatten().norm();
  if (labels) report.accuracy = accuracy(final_trace.z, *labels);

  result.params = std::move(params);
  result.bundles = std::move(bundles);
  return result;
}

void save_report(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : report.epochs) {
    nlohmann::json j{{"type", "epoch"},         {"epoch", e.epoch},       {"loss", e.loss},
                     {"be_mean", e.be_mean},    {"rank_mean", e.rank_mean}, {"ie_mean", e.ie_mean},
                     {"grad_norm", e.grad_norm}, {"be_grad_inf", e.be_grad_inf}, {"evictions", e.evictions}};
    out << j.dump() << '\n';
  }
  nlohmann::json summary{{"type", "summary"},
                         {"eta", report.eta},
                         {"g_hat", report.g_hat},
                         {"m_hat", report.m_hat},
                         {"num_params", report.num_params},
                         {"mean_bundle_size", report.mean_bundle_size},
                         {"final_loss", report.final_loss},
                         {"final_grad_norm", report.final_grad_norm}};
  summary["accuracy"] = report.accuracy ? nlohmann::json(*report.accuracy) : nlohmann::json(nullptr);
  summary["refinement_events"] = nlohmann::json::array();
  for (const auto& ev : report.events) {
    summary["refinement_events"].push_back({{"epoch", ev.epoch}, {"bundle_id", ev.bundle_id}, {"node", ev.node}});
  }
  out << summary.dump() << '\n';
}

}  // namespace dense
