#include "dense/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dense/error.hpp"
#include "dense/rng.hpp"

namespace dense {
namespace {

constexpr std::uint64_t kTheorem1Domain = 0x746831;  // "th1"
constexpr std::uint64_t kTheorem2Domain = 0x746832;  // "th2"
constexpr double kScoreScale = 2.0;

double neg_log_softmax(const Vector& scores, ClassId label) {
  const double mx = scores.maxCoeff();
  const double lse = mx + std::log((scores.array() - mx).exp().sum());
  return lse - scores(static_cast<Eigen::Index>(label));
}

double bundle_ce(const Matrix& scores, ClassId label) {
  return neg_log_softmax(scores.colwise().mean().transpose(), label);
}

Vector random_vector(Eigen::Index size, double scale, Rng& rng) {
  Vector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v(i) = scale * standard_normal(rng);
  return v;
}

struct SingleBundle {
  GcnInput input;
  std::vector<Bundle> bundles;
  std::vector<NodeId> members;
};

Vector be_gradient(GcnParams& params, const SingleBundle& inst, const Vector& theta) {
  params.assign(theta);
  const ForwardTrace trace = forward(params, inst.input);
  const LossValue loss = total_loss_and_grad(trace.z, inst.bundles, {true, false, false});
  return backward(params, inst.input, trace, loss.dz_be).flatten();
}

}  // namespace

OutlierGradients outlier_gradients(const Matrix& scores, std::size_t outlier, ClassId label, double step) {
  const auto o = static_cast<Eigen::Index>(outlier);
  const auto size = static_cast<double>(scores.rows());
  OutlierGradients out;
  const Vector p_o = softmax_row(scores.row(o).transpose());
  Eigen::Index m = 0;
  p_o.maxCoeff(&m);
  out.m_prime = static_cast<ClassId>(m);
  out.outlier_m = p_o(m);
  out.bundle_m = softmax_row(scores.colwise().mean().transpose())(m);

  Matrix plus = scores;
  Matrix minus = scores;
  plus(o, m) += step;
  minus(o, m) -= step;
  out.g_be = (bundle_ce(plus, label) - bundle_ce(minus, label)) / (2.0 * step);
  out.g_ie = (neg_log_softmax(plus.row(o).transpose(), label) - neg_log_softmax(minus.row(o).transpose(), label)) /
             (2.0 * step * size);
  return out;
}

Theorem1Report verify_theorem1(std::size_t trials, std::size_t num_classes, std::size_t bundle_size,
                               std::uint64_t seed, double tolerance) {
  if (trials < 1 || num_classes < 2 || bundle_size < 2) {
    throw ConfigError("theorem 1 check needs trials >= 1, C >= 2 and |B| >= 2");
  }
  Rng rng = make_stream(seed, 0, kTheorem1Domain);
  Theorem1Report report;
  report.min_margin = std::numeric_limits<double>::infinity();
  const std::size_t max_draws = 1000 * trials;
  const auto rows = static_cast<Eigen::Index>(bundle_size);
  const auto cols = static_cast<Eigen::Index>(num_classes);
  while (report.kept < trials) {
    if (report.draws == max_draws) throw Error("theorem 1 check: too few draws satisfy the conditions");
    ++report.draws;
    Matrix scores(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) scores.row(i) = random_vector(cols, kScoreScale, rng).transpose();
    const auto label = static_cast<ClassId>(uniform_index(rng, num_classes));
    const OutlierGradients g = outlier_gradients(scores, 0, label);
    if (g.m_prime == label || g.outlier_m < g.bundle_m) continue;
    ++report.kept;
    const double violation = std::max(-tolerance - g.g_be, g.g_be - g.g_ie - tolerance);
    if (violation <= 0.0) {
      ++report.passed;
    } else {
      report.max_violation = std::max(report.max_violation, violation);
    }
    report.min_margin = std::min(report.min_margin, g.g_ie - g.g_be);
  }
  report.pass_fraction = static_cast<double>(report.passed) / static_cast<double>(report.kept);
  return report;
}

Theorem2Report verify_theorem2(std::size_t random_points, std::uint64_t seed, std::size_t lipschitz_pairs) {
  constexpr std::size_t n = 8, d = 6, h = 6, c = 4, size = 5;
  constexpr double step = 1e-5;
  Rng rng = make_stream(seed, 0, kTheorem2Domain);

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u) {
    edges.emplace_back(u, (u + 1) % n);
    for (NodeId v = u + 2; v < n; ++v) {
      if (uniform01(rng) < 0.3) edges.emplace_back(u, v);
    }
  }
  const Graph graph(n, edges);
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) x.row(static_cast<Eigen::Index>(i)) = random_vector(d, 1.0, rng).transpose();

  Bundle bundle;
  bundle.core = 0;
  for (NodeId v = 0; v < size; ++v) bundle.members.push_back(v);
  bundle.label = uniform_index(rng, c);
  SingleBundle inst{GcnInput(normalized_adjacency(graph), x), {bundle}, bundle.members};

  GcnParams params = GcnParams::zeros(d, h, c);
  const auto nd = static_cast<Eigen::Index>(params.num_params());
  Theorem2Report report;
  report.num_nodes = n;
  report.bundle_size = size;
  report.num_params = params.num_params();
  report.all_grad_ok = report.all_hess_ok = true;

  std::vector<Vector> thetas{Vector::Zero(nd)};
  for (std::size_t k = 0; k < random_points; ++k) thetas.push_back(random_vector(nd, 1.0, rng));

  double g_max = 0.0, m_max = 0.0;
  const double inv_size = 1.0 / static_cast<double>(size);
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    const Vector& theta = thetas[k];
    params.assign(theta);
    const auto bounds = estimate_logit_bounds(params, inst.input, inst.members, step);
    Theorem2Point pt;
    pt.zero_point = k == 0;
    pt.g_hat = bounds.g;
    pt.m_hat = bounds.m;
    g_max = std::max(g_max, bounds.g);
    m_max = std::max(m_max, bounds.m);

    const Vector grad = be_gradient(params, inst, theta);
    pt.grad_inf = grad.cwiseAbs().maxCoeff();
    pt.grad_bound = 2.0 * bounds.g * inv_size;
    params.assign(theta);
    const Vector q = bundle_distribution(forward(params, inst.input).z, bundle);
    pt.direct_grad_bound = 2.0 * bounds.g * (1.0 - q(static_cast<Eigen::Index>(*bundle.label)));

    for (Eigen::Index j = 0; j < nd; ++j) {
      Vector t = theta;
      t(j) += step;
      const Vector gp = be_gradient(params, inst, t);
      t(j) = theta(j) - step;
      const Vector gm = be_gradient(params, inst, t);
      pt.hess_max = std::max(pt.hess_max, ((gp - gm) / (2.0 * step)).cwiseAbs().maxCoeff());
    }
    pt.hess_bound = 2.0 * (bounds.m + bounds.g * bounds.g) * inv_size;
    pt.grad_ok = pt.grad_inf <= pt.grad_bound + 1e-8;
    pt.hess_ok = pt.hess_max <= pt.hess_bound + 1e-6;
    report.all_grad_ok = report.all_grad_ok && pt.grad_ok;
    report.all_hess_ok = report.all_hess_ok && pt.hess_ok;
    report.points.push_back(pt);
  }

  report.smoothness_constant = 2.0 * static_cast<double>(nd) * (m_max + g_max * g_max) * inv_size;
  for (std::size_t k = 0; k < lipschitz_pairs; ++k) {
    const Vector a = random_vector(nd, 1.0, rng);
    const Vector b = random_vector(nd, 1.0, rng);
    const double ratio = (be_gradient(params, inst, a) - be_gradient(params, inst, b)).norm() / (a - b).norm();
    report.max_observed_lipschitz = std::max(report.max_observed_lipschitz, ratio);
  }
  report.lipschitz_ok = report.max_observed_lipschitz <= report.smoothness_constant;
  return report;
}

Theorem3Report verify_theorem3(std::uint64_t seed, std::size_t max_epochs, double grad_tol, double increase_tol) {
  SbmConfig sbm;
  sbm.seed = seed;
  const Dataset data = gen_sbm(sbm);
  SamplingConfig sampling;
  sampling.seed = seed;
  OracleConfig oracle;
  oracle.seed = seed;
  auto annotated = annotate_all_oracle(sample_bundles(data.graph, &data.embeddings, sampling), *data.table.labels,
                                       data.table.num_classes(), oracle);
  const GcnInput input(normalized_adjacency(data.graph), data.embeddings.data());

  TrainConfig cfg;
  cfg.seed = seed;
  cfg.eta_auto = true;
  cfg.epochs = max_epochs;
  cfg.stop_grad_norm = grad_tol;
  cfg.refine_enabled = false;
  const auto plain = train(input, annotated.bundles, data.table.num_classes(), cfg);

  Theorem3Report report;
  const auto& epochs = plain.report.epochs;
  report.epochs_run = epochs.size();
  report.eta = plain.report.eta;
  report.g_hat = plain.report.g_hat;
  report.m_hat = plain.report.m_hat;
  report.first_loss = epochs.front().loss;
  report.final_loss = plain.report.final_loss;
  report.final_grad_norm = plain.report.final_grad_norm;
  std::vector<double> losses;
  for (const auto& e : epochs) losses.push_back(e.loss);
  losses.push_back(plain.report.final_loss);
  for (std::size_t t = 1; t < losses.size(); ++t) {
    report.max_increase = std::max(report.max_increase, losses[t] - losses[t - 1]);
  }
  report.monotone = report.max_increase <= increase_tol;
  report.converged = report.final_grad_norm <= grad_tol;

  cfg.refine_enabled = true;
  const auto refined = train(input, annotated.bundles, data.table.num_classes(), cfg);
  report.refine_events = refined.report.events.size();
  const auto& r = refined.report.epochs;
  for (std::size_t t = 1; t < r.size(); ++t) {
    if (r[t].evictions > 0) continue;
    report.refine_max_increase = std::max(report.refine_max_increase, r[t].loss - r[t - 1].loss);
  }
  report.refine_monotone = report.refine_max_increase <= increase_tol;
  return report;
}

}  // namespace dense
