// One PASS/FAIL line per acceptance criterion. Exit status is non-zero when
// any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "dense/bench.hpp"
#include "dense/error.hpp"
#include "dense/supervise.hpp"
#include "dense/verify.hpp"
#include "stub_server.hpp"
#include "test_util.hpp"

using namespace dense;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream detail;
  detail << o.detail << "; " << secs << " s";
  if (limit_seconds > 0.0 && secs > limit_seconds) {
    o.pass = false;
    detail << " exceeds " << limit_seconds << " s";
  }
  std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), detail.str().c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// ---- criterion 1 -----------------------------------------------------------

Outcome gradient_check() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(10, 30)(rng);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
    const std::size_t h = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
    const std::size_t c = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (NodeId u = 0; u < n; ++u) {
      for (NodeId v = u + 1; v < n; ++v) {
        if (std::bernoulli_distribution(0.2)(rng)) edges.emplace_back(u, v);
      }
    }
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    const GcnInput input(normalized_adjacency(Graph(n, edges)), x);
    GcnParams params = init_params(d, h, c, static_cast<std::uint64_t>(inst));
    for (Eigen::Index i = 0; i < params.b1.size(); ++i) params.b1(i) = 0.1 * normal(rng);
    for (Eigen::Index i = 0; i < params.b2.size(); ++i) params.b2(i) = 0.1 * normal(rng);

    std::vector<Bundle> bundles(4);
    for (std::size_t b = 0; b < bundles.size(); ++b) {
      std::vector<NodeId> all(n);
      std::iota(all.begin(), all.end(), NodeId{0});
      std::shuffle(all.begin(), all.end(), rng);
      bundles[b].id = b;
      bundles[b].members.assign(all.begin(), all.begin() + 2 + static_cast<long>(b));
      bundles[b].core = bundles[b].members.front();
      bundles[b].label = std::uniform_int_distribution<ClassId>(0, c - 1)(rng);
    }

    const auto trace = forward(params, input);
    const Vector analytic = backward(params, input, trace, total_loss_and_grad(trace.z, bundles).dz).flatten();
    const Vector theta = params.flatten();
    Vector numeric(theta.size());
    GcnParams probe = params;
    constexpr double step = 1e-6;
    const auto loss_at = [&](const Vector& t) {
      probe.assign(t);
      return total_loss_and_grad(forward(probe, input).z, bundles).total;
    };
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      Vector t = theta;
      t(j) += step;
      const double up = loss_at(t);
      t(j) -= 2.0 * step;
      numeric(j) = (up - loss_at(t)) / (2.0 * step);
    }
    const double scale = std::max(analytic.norm(), numeric.norm());
    worst = std::max(worst, scale == 0.0 ? 0.0 : (analytic - numeric).norm() / scale);
  }
  return {worst <= 1e-6, "max relative error " + fmt(worst) + " over 20 instances"};
}

// ---- criteria 5 to 7 -------------------------------------------------------

Outcome loss_values() {
  const Vector uniform = Vector::Constant(4, 0.25);
  Vector p(3);
  p << 0.5, 0.3, 0.2;
  const double e1 = std::abs(loss_be(uniform, 0) - std::log(4.0));
  const double e2 = std::abs(loss_rank(p, 1) - std::log(5.0 / 3.0));
  bool zero_at_max = loss_rank(p, 0) == 0.0 && loss_rank(uniform, 3) == 0.0;
  Vector tie(3);
  tie << 0.4, 0.4, 0.2;
  zero_at_max = zero_at_max && loss_rank(tie, 0) == 0.0 && loss_rank(tie, 1) == 0.0;
  return {e1 <= 1e-12 && e2 <= 1e-12 && zero_at_max,
          "|L_BE - ln4| = " + fmt(e1) + ", |L_R - ln(5/3)| = " + fmt(e2) +
              (zero_at_max ? ", L_R = 0 at the max" : ", L_R nonzero at the max")};
}

Outcome invariances() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 3.0);
  bool perm_exact = true;
  double worst = 0.0;
  for (int draw = 0; draw < 1000; ++draw) {
    const Eigen::Index n = 8, c = 5;
    Matrix z(n, c);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
    Bundle b;
    b.members.resize(static_cast<std::size_t>(std::uniform_int_distribution<int>(2, 8)(rng)));
    std::vector<NodeId> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), NodeId{0});
    std::shuffle(all.begin(), all.end(), rng);
    std::copy_n(all.begin(), b.members.size(), b.members.begin());
    const Vector pb = bundle_distribution(z, b);

    Bundle reversed = b;
    std::reverse(reversed.members.begin(), reversed.members.end());
    Bundle shuffled = b;
    std::shuffle(shuffled.members.begin(), shuffled.members.end(), rng);
    perm_exact = perm_exact && bundle_distribution(z, reversed) == pb && bundle_distribution(z, shuffled) == pb;

    // softmax of the mean log-probabilities.
    Vector mean_log_p = Vector::Zero(c);
    for (NodeId m : b.members) {
      const Vector row = z.row(static_cast<Eigen::Index>(m)).transpose();
      const double mx = row.maxCoeff();
      mean_log_p += (row.array() - mx - std::log((row.array() - mx).exp().sum())).matrix();
    }
    mean_log_p /= static_cast<double>(b.members.size());
    worst = std::max(worst, (softmax_row(mean_log_p) - pb).cwiseAbs().maxCoeff());
  }
  return {perm_exact && worst <= 1e-12,
          std::string(perm_exact ? "permutation invariant" : "permutation changes p(B)") +
              ", max |softmax(mean log p) - softmax(mean z)| = " + fmt(worst) + " over 1000 draws"};
}

Outcome refinement_contract() {
  std::vector<std::string> broken;
  const auto bundle = [](std::size_t id, std::vector<NodeId> members, ClassId label) {
    Bundle b;
    b.id = id;
    b.core = members.front();
    b.members = std::move(members);
    b.label = label;
    return b;
  };
  Matrix p(6, 2);
  p << 0.9, 0.1,  //
      0.8, 0.2,   //
      0.1, 0.9,   //
      0.1, 0.9,   //
      0.5, 0.5,   //
      0.5, 0.5;
  std::vector<Bundle> bundles{bundle(0, {0, 1, 2}, 0),     // evict 2
                              bundle(1, {0, 2, 3, 1}, 0),  // evict the tied 2 and 3
                              bundle(2, {4, 5}, 1),        // all tie: skip
                              bundle(3, {0, 2}, 0),        // floor: skip
                              bundle(4, {1, 2, 3}, 0)};    // would leave one member: skip
  const auto copy = bundles;
  const auto events = refine(p, bundles, 2, 75);
  if (bundles[0].members != std::vector<NodeId>{0, 1}) broken.emplace_back("minimal member");
  if (bundles[1].members != std::vector<NodeId>{0, 1}) broken.emplace_back("tied minimum");
  if (bundles[2].members.size() != 2) broken.emplace_back("all-tie skip");
  if (bundles[3].members.size() != 2) broken.emplace_back("floor");
  if (bundles[4].members.size() != 3) broken.emplace_back("floor on eviction");
  if (events.size() != 3) broken.emplace_back("event count");
  auto again = copy;
  if (refine(p, again, 2, 75) != events || again != bundles) broken.emplace_back("determinism");
  std::string detail = "3 evictions on 5 crafted bundles";
  for (const auto& b : broken) detail += ", broken: " + b;
  return {broken.empty(), detail};
}

// ---- criteria 8 to 10 ------------------------------------------------------

ExperimentConfig standard(Variant v, double noise) {
  ExperimentConfig cfg;
  cfg.variant = v;
  cfg.oracle.noise_rate = noise;
  return cfg;
}

// ---- criterion 11 ----------------------------------------------------------

Outcome llm_conformance() {
  testutil::StubChatServer server;
  testutil::TempDir dir;
  ::setenv("DENSE_ACCEPT_KEY", "sk-accept", 1);
  LlmEndpointConfig cfg;
  cfg.base_url = server.base_url();
  cfg.model = "stub";
  cfg.api_key_env_var = "DENSE_ACCEPT_KEY";
  cfg.max_retries = 2;
  cfg.retry_backoff_seconds = 0.0;
  cfg.timeout_seconds = 5;
  cfg.parallelism = 1;
  HttpChatTransport transport(cfg);

  NodeTable table;
  table.texts = {"t0", "t1", "t2", "t3", "t4"};
  table.class_names = {"Agents", "Databases", "Theory"};
  std::vector<Bundle> bundles(4);
  for (std::size_t i = 0; i < 4; ++i) {
    bundles[i].id = i;
    bundles[i].core = i;
    bundles[i].members = {i, i + 1};
  }
  // b0 parses at once; b1 after one re-ask; b2 never parses; b3 never gets an HTTP 200.
  server.push("Agents");
  server.push("hmm");
  server.push("theory");
  server.push("x");
  server.push("y");
  server.push("z");
  server.push({500, "down", true});
  server.push({500, "down", true});
  server.push({500, "down", true});

  std::vector<std::string> broken;
  AnnotationResult cold;
  {
    AnnotationCache cache(dir / "cache.jsonl");
    cold = annotate_all_llm(bundles, table, "desc", cfg, cache, transport);
  }
  const int cold_calls = server.requests();
  if (cold_calls != 9) broken.push_back("cold calls " + std::to_string(cold_calls));
  if (cold.records[0].label != ClassId{0} || cold.records[0].attempts != 1) broken.emplace_back("first parse");
  if (cold.records[1].label != ClassId{2} || cold.records[1].attempts != 2) broken.emplace_back("retry");
  if (cold.records[2].label || cold.bundles[2].label || cold.records[2].attempts != 3) broken.emplace_back("failure");
  if (cold.records[3].label || cold.records[3].error.empty()) broken.emplace_back("transport failure");
  if (cold.labeled != 2 || cold.failed != 2) broken.emplace_back("counts");

  // Bundle 3's transport failure is not cached, so the warm pass asks once more for it alone.
  server.set_fallback({200, "Databases", false});
  AnnotationCache warm(dir / "cache.jsonl");
  const auto second = annotate_all_llm(bundles, table, "desc", cfg, warm, transport);
  const int second_calls = server.requests() - cold_calls;
  if (second_calls != 1) broken.push_back("second pass calls " + std::to_string(second_calls));
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(second.records[i] == cold.records[i])) broken.push_back("cached record " + std::to_string(i));
  }
  if (second.records[3].label != ClassId{1}) broken.emplace_back("recovered label");

  AnnotationCache hot(dir / "cache.jsonl");
  const int before = server.requests();
  const auto third = annotate_all_llm(bundles, table, "desc", cfg, hot, transport);
  const int warm_calls = server.requests() - before;
  if (warm_calls != 0) broken.push_back("warm calls " + std::to_string(warm_calls));
  if (!(third.records == second.records)) broken.emplace_back("warm records");

  std::string detail = "cold " + std::to_string(cold_calls) + " calls, warm " + std::to_string(warm_calls) + " calls";
  for (const auto& b : broken) detail += ", broken: " + b;
  return {broken.empty(), detail};
}

}  // namespace

int main() {
  run(1, "gradient correctness", 30, gradient_check);

  run(2, "outlier tolerance inequality", 10, [] {
    const auto r = verify_theorem1(10000, 5, 5, 0, 1e-10);
    return Outcome{r.pass_fraction == 1.0, "pass fraction " + fmt(r.pass_fraction) + " over " +
                                               std::to_string(r.kept) + " kept of " + std::to_string(r.draws) +
                                               " draws, min margin " + fmt(r.min_margin)};
  });

  run(3, "gradient and Hessian bounds", 60, [] {
    const auto r = verify_theorem2(10, 0);
    std::size_t grad_ok = 0, hess_ok = 0;
    double worst_ratio = 0.0;
    for (const auto& p : r.points) {
      grad_ok += p.grad_ok ? 1 : 0;
      hess_ok += p.hess_ok ? 1 : 0;
      worst_ratio = std::max(worst_ratio, p.grad_inf / p.grad_bound);
    }
    const auto n = std::to_string(r.points.size());
    return Outcome{r.all_grad_ok && r.all_hess_ok,
                   "gradient bound holds at " + std::to_string(grad_ok) + "/" + n + " points (worst ratio " +
                       fmt(worst_ratio) + "), Hessian bound at " + std::to_string(hess_ok) + "/" + n};
  });

  run(4, "monotone convergence", 300, [] {
    const auto r = verify_theorem3(0, 5000, 1e-3, 1e-9);
    return Outcome{r.monotone && r.converged && r.refine_monotone,
                   "eta " + fmt(r.eta) + ", " + std::to_string(r.epochs_run) + " epochs, loss " + fmt(r.first_loss) +
                       " -> " + fmt(r.final_loss) + ", max increase " + fmt(r.max_increase) + ", final grad norm " +
                       fmt(r.final_grad_norm) + ", with refinement max increase " + fmt(r.refine_max_increase) +
                       " across " + std::to_string(r.refine_events) + " evictions"};
  });

  run(5, "loss unit values", 0, loss_values);
  run(6, "bundle distribution invariances", 0, invariances);
  run(7, "refinement contract", 0, refinement_contract);

  ExperimentReport full_noisy;
  run(8, "directional ablation", 600, [&] {
    full_noisy = run_pipeline(standard(Variant::kFull, 0.3));
    const auto v5 = run_pipeline(standard(Variant::kIndividualSupervision, 0.3));
    const auto v1 = run_pipeline(standard(Variant::kRandomSampling, 0.3));
    const double f = full_noisy.mean_accuracy;
    return Outcome{f >= v5.mean_accuracy && f >= v1.mean_accuracy,
                   "full " + fmt(f) + ", V5 " + fmt(v5.mean_accuracy) + ", V1 " + fmt(v1.mean_accuracy)};
  });

  run(9, "bundle count sweep", 0, [&] {
    auto small = standard(Variant::kFull, 0.3);
    small.sampling.num_bundles = 25;
    const auto r25 = run_pipeline(small);
    const ExperimentReport& r100 = full_noisy.replicates.empty() ? run_pipeline(standard(Variant::kFull, 0.3)) : full_noisy;
    const double pooled = std::sqrt((r25.std_accuracy * r25.std_accuracy + r100.std_accuracy * r100.std_accuracy) / 2.0);
    return Outcome{r100.mean_accuracy >= r25.mean_accuracy - pooled,
                   "n_S=100 " + fmt(r100.mean_accuracy) + ", n_S=25 " + fmt(r25.mean_accuracy) + ", pooled std " +
                       fmt(pooled)};
  });

  run(10, "end-to-end accuracy", 0, [] {
    const auto r = run_pipeline(standard(Variant::kFull, 0.0));
    return Outcome{r.mean_accuracy >= 0.85,
                   "mean accuracy " + fmt(r.mean_accuracy) + " +/- " + fmt(r.std_accuracy) + " (threshold 0.85)"};
  });

  run(11, "chat-completion client conformance", 0, llm_conformance);

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
