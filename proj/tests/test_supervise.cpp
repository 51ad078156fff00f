#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dense/bench.hpp"
#include "dense/error.hpp"
#include "dense/supervise.hpp"
#include "test_util.hpp"

using namespace dense;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Bundle make_bundle(std::size_t id, std::vector<NodeId> members, std::optional<ClassId> label) {
  Bundle b;
  b.id = id;
  b.core = members.front();
  b.members = std::move(members);
  b.label = label;
  return b;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Direct softmax of the column mean, written without the library helpers.
Vector naive_bundle_distribution(const Matrix& z, const std::vector<NodeId>& members) {
  Vector mean = Vector::Zero(z.cols());
  for (NodeId m : members) mean += z.row(static_cast<Eigen::Index>(m)).transpose();
  mean /= static_cast<double>(members.size());
  Vector e = mean.array().exp();
  return e / e.sum();
}

}  // namespace

TEST_CASE("loss values on reference distributions") {
  const Vector uniform = Vector::Constant(4, 0.25);
  CHECK(loss_be(uniform, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(loss_rank(uniform, 2) == 0.0);

  const Vector p = vec({0.7, 0.2, 0.1});
  CHECK(loss_be(p, 0) == doctest::Approx(-std::log(0.7)).epsilon(1e-12));
  CHECK(loss_rank(p, 0) == 0.0);
  CHECK(loss_rank(p, 1) == doctest::Approx(std::log(3.5)).epsilon(1e-12));

  CHECK(loss_rank(vec({0.5, 0.3, 0.2}), 1) == doctest::Approx(std::log(5.0 / 3.0)).epsilon(1e-12));
  CHECK(loss_rank(vec({0.4, 0.4, 0.2}), 1) == 0.0);
  CHECK(loss_rank(vec({0.4, 0.4, 0.2}), 0) == 0.0);
}

TEST_CASE("bundle distribution") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> size_dist(2, 6);
  for (int draw = 0; draw < 1000; ++draw) {
    const Matrix z = random_matrix(10, 4, rng, 3.0);
    std::vector<NodeId> members(10);
    std::iota(members.begin(), members.end(), NodeId{0});
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(static_cast<std::size_t>(size_dist(rng)));
    const auto b = make_bundle(0, members, std::nullopt);
    const Vector pb = bundle_distribution(z, b);

    CHECK(std::abs(pb.sum() - 1.0) <= 1e-12);
    CHECK((pb - naive_bundle_distribution(z, members)).cwiseAbs().maxCoeff() <= 1e-12);

    auto shuffled = b;
    std::shuffle(shuffled.members.begin(), shuffled.members.end(), rng);
    CHECK(bundle_distribution(z, shuffled) == pb);

    Matrix shifted = z;
    shifted.row(static_cast<Eigen::Index>(members[0])).array() += 5.0;
    CHECK((bundle_distribution(shifted, b) - pb).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const auto single = make_bundle(0, {3}, std::nullopt);
  Matrix z = Matrix::Zero(5, 3);
  z.row(3) << 1, 2, 3;
  CHECK((bundle_distribution(z, single) - softmax_row(z.row(3).transpose())).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("objective gradient matches finite differences") {
  std::mt19937_64 rng(3);
  const std::vector<LossTerms> term_sets{{true, true, false}, {true, false, false}, {false, true, false},
                                         {false, true, true}, {true, true, true}};
  for (const auto& terms : term_sets) {
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix z = random_matrix(12, 4, rng, 2.0);
      std::vector<Bundle> bundles{make_bundle(0, {0, 1, 2}, 1), make_bundle(1, {2, 5, 7, 8}, 3),
                                  make_bundle(2, {9, 10}, std::nullopt), make_bundle(3, {4, 6}, 0)};
      const auto lv = total_loss_and_grad(z, bundles, terms);
      CHECK(lv.labeled == 3);
      constexpr double h = 1e-6;
      Matrix numeric(z.rows(), z.cols());
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        Matrix up = z, down = z;
        up.data()[i] += h;
        down.data()[i] -= h;
        numeric.data()[i] =
            (total_loss_and_grad(up, bundles, terms).total - total_loss_and_grad(down, bundles, terms).total) / (2 * h);
      }
      CHECK((lv.dz - numeric).norm() <= 1e-6 * std::max(1.0, numeric.norm()));
      // Nodes outside every labeled bundle receive no gradient.
      for (Eigen::Index row : {9, 10, 11, 3}) CHECK(lv.dz.row(row).isZero(0.0));
    }
  }
  CHECK_THROWS_AS(total_loss_and_grad(Matrix::Zero(3, 2), {make_bundle(0, {0, 1}, std::nullopt)}), ConfigError);
}

TEST_CASE("objective aggregation") {
  Matrix z = Matrix::Zero(4, 3);
  z.row(0) << 1, 0, 0;
  z.row(1) << 0, 2, 0;
  std::vector<Bundle> bundles{make_bundle(0, {0, 1}, 2), make_bundle(1, {2, 3}, 0)};
  const auto lv = total_loss_and_grad(z, bundles);
  const double be0 = loss_be(bundle_distribution(z, bundles[0]), 2);
  const double be1 = std::log(3.0);
  const double r0 = loss_rank(bundle_distribution(z, bundles[0]), 2);
  CHECK(lv.be_mean == doctest::Approx((be0 + be1) / 2));
  CHECK(lv.rank_mean == doctest::Approx(r0 / 2));
  CHECK(lv.total == doctest::Approx((be0 + be1 + r0) / 2));
}

TEST_CASE("refine") {
  SUBCASE("least confident member is evicted") {
    Matrix p(3, 2);
    p << 0.9, 0.1, 0.8, 0.2, 0.1, 0.9;
    std::vector<Bundle> b{make_bundle(4, {0, 1, 2}, 0)};
    const auto ev = refine(p, b, 2, 75);
    REQUIRE(ev.size() == 1);
    CHECK(ev[0] == RefinementEvent{75, 4, 2});
    CHECK(b[0].members == std::vector<NodeId>{0, 1});
    REQUIRE(b[0].evicted.size() == 1);
    CHECK(b[0].evicted[0].node == 2);
    CHECK(b[0].evicted[0].epoch == 75);
  }
  SUBCASE("ties at the minimum are all evicted") {
    Matrix p(4, 2);
    p << 0.9, 0.1, 0.3, 0.7, 0.8, 0.2, 0.3, 0.7;
    std::vector<Bundle> b{make_bundle(0, {0, 1, 2, 3}, 0)};
    CHECK(refine(p, b, 2, 100).size() == 2);
    CHECK(b[0].members == std::vector<NodeId>{0, 2});
  }
  SUBCASE("all-equal confidences leave the bundle alone") {
    Matrix p = Matrix::Constant(3, 2, 0.5);
    std::vector<Bundle> b{make_bundle(0, {0, 1, 2}, 1)};
    CHECK(refine(p, b, 2, 75).empty());
    CHECK(b[0].members.size() == 3);
  }
  SUBCASE("floor is respected") {
    Matrix p(2, 2);
    p << 0.9, 0.1, 0.2, 0.8;
    std::vector<Bundle> b{make_bundle(0, {0, 1}, 0)};
    CHECK(refine(p, b, 2, 75).empty());
    Matrix q(3, 2);
    q << 0.9, 0.1, 0.2, 0.8, 0.2, 0.8;
    std::vector<Bundle> c{make_bundle(0, {0, 1, 2}, 0)};
    CHECK(refine(q, c, 2, 75).empty());
  }
  SUBCASE("unlabeled bundles are skipped") {
    Matrix p(3, 2);
    p << 0.9, 0.1, 0.8, 0.2, 0.1, 0.9;
    std::vector<Bundle> b{make_bundle(0, {0, 1, 2}, std::nullopt)};
    CHECK(refine(p, b, 2, 75).empty());
  }
}

TEST_CASE("auto learning rate and accuracy") {
  CHECK(auto_learning_rate(5.0, 100, 2.0, 3.0, 0.9) == doctest::Approx(0.9 * 5.0 / (100.0 * 7.0)));
  Matrix z = Matrix::Zero(8, 4);
  const std::vector<ClassId> labels{0, 1, 2, 3, 0, 1, 2, 3};
  CHECK(accuracy(z, labels) == doctest::Approx(0.25));
  z(1, 1) = 1.0;
  CHECK(accuracy(z, labels) == doctest::Approx(0.375));
  CHECK_THROWS_AS(accuracy(z, {0, 1}), ConfigError);
}

TEST_CASE("train") {
  SbmConfig sbm;
  sbm.num_nodes = 80;
  sbm.p_in = 0.2;
  sbm.p_out = 0.01;
  sbm.seed = 5;
  const Dataset data = gen_sbm(sbm);
  const GcnInput input(normalized_adjacency(data.graph), data.embeddings.data());
  SamplingConfig scfg;
  scfg.num_bundles = 30;
  scfg.seed = 5;
  OracleConfig ocfg;
  ocfg.seed = 5;
  const auto annotated =
      annotate_all_oracle(sample_bundles(data.graph, &data.embeddings, scfg), *data.table.labels, 4, ocfg);

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.hidden_dim = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = 5;

  SUBCASE("deterministic and learns") {
    const auto a = train(input, annotated.bundles, 4, cfg, &*data.table.labels);
    const auto b = train(input, annotated.bundles, 4, cfg, &*data.table.labels);
    CHECK(a.params == b.params);
    CHECK(a.report == b.report);
    CHECK(a.report.epochs.size() == 200);
    CHECK(a.report.final_loss < a.report.epochs.front().loss);
    REQUIRE(a.report.accuracy);
    CHECK(*a.report.accuracy > 0.7);
    for (const auto& ev : a.report.events) {
      CHECK(ev.epoch > cfg.warmup_epochs);
      CHECK((ev.epoch - cfg.warmup_epochs) % cfg.refine_every == 0);
    }
    for (const auto& bundle : a.bundles) CHECK(bundle.size() >= 2);
  }
  SUBCASE("refinement disabled or never scheduled") {
    cfg.refine_enabled = false;
    CHECK(train(input, annotated.bundles, 4, cfg).report.events.empty());
    cfg.refine_enabled = true;
    cfg.refine_every = 1000;
    CHECK(train(input, annotated.bundles, 4, cfg).report.events.empty());
  }
  SUBCASE("automatic learning rate") {
    cfg.eta_auto = true;
    cfg.epochs = 5;
    const auto r = train(input, annotated.bundles, 4, cfg).report;
    CHECK(r.g_hat > 0.0);
    CHECK(r.m_hat > 0.0);
    CHECK(r.eta == doctest::Approx(auto_learning_rate(r.mean_bundle_size, r.num_params, r.g_hat, r.m_hat)));
  }
  SUBCASE("divergence raises a training error") {
    cfg.learning_rate = 1e250;
    CHECK_THROWS_AS(train(input, annotated.bundles, 4, cfg), TrainingError);
  }
  SUBCASE("stop on small gradient") {
    cfg.stop_grad_norm = 1e6;
    CHECK(train(input, annotated.bundles, 4, cfg).report.epochs.size() == 1);
  }
  SUBCASE("configuration errors") {
    cfg.bundle_floor = 1;
    CHECK_THROWS_AS(train(input, annotated.bundles, 4, cfg), ConfigError);
    cfg.bundle_floor = 2;
    auto unlabeled = annotated.bundles;
    for (auto& b : unlabeled) b.label.reset();
    CHECK_THROWS_AS(train(input, unlabeled, 4, cfg), ConfigError);
  }
  SUBCASE("report file") {
    testutil::TempDir dir;
    const auto r = train(input, annotated.bundles, 4, cfg, &*data.table.labels).report;
    save_report(r, dir / "report.jsonl");
    const auto text = testutil::read_file(dir / "report.jsonl");
    CHECK(std::count(text.begin(), text.end(), '\n') == 201);
    CHECK(text.find("\"type\":\"summary\"") != std::string::npos);
  }
}
