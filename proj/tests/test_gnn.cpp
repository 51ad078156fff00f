#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dense/error.hpp"
#include "dense/gnn.hpp"
#include "test_util.hpp"

using namespace dense;

namespace {

struct Instance {
  Graph graph;
  Matrix x;
  GcnParams params;
};

Instance random_instance(std::size_t n, std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.25);
  std::normal_distribution<double> normal;
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      if (coin(rng)) edges.emplace_back(u, v);
    }
  }
  Instance inst{Graph(n, edges), Matrix(n, d), init_params(d, h, c, seed)};
  for (Eigen::Index i = 0; i < inst.x.size(); ++i) inst.x.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < inst.params.b1.size(); ++i) inst.params.b1(i) = 0.1 * normal(rng);
  for (Eigen::Index i = 0; i < inst.params.b2.size(); ++i) inst.params.b2(i) = 0.1 * normal(rng);
  return inst;
}

// Scalar loss sum_ij R_ij * log softmax(Z)_ij and its gradient wrt Z.
double weighted_log_prob(const Matrix& z, const Matrix& r) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    s += (r.row(i).array() * (z.row(i).array() - lse)).sum();
  }
  return s;
}

Matrix weighted_log_prob_grad(const Matrix& z, const Matrix& r) {
  const Matrix p = softmax_rows(z);
  Matrix g(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) g.row(i) = r.row(i) - r.row(i).sum() * p.row(i);
  return g;
}

double rel_error(const Vector& a, const Vector& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace

TEST_CASE("init_params") {
  const auto a = init_params(7, 5, 3, 42);
  CHECK(a == init_params(7, 5, 3, 42));
  CHECK_FALSE(a == init_params(7, 5, 3, 43));
  CHECK(a.b1.isZero(0.0));
  CHECK(a.b2.isZero(0.0));
  CHECK(a.w1.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 12.0));
  CHECK(a.w2.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 8.0));
  CHECK(a.num_params() == 7 * 5 + 5 + 5 * 3 + 3);
}

TEST_CASE("flatten and assign round trip") {
  auto p = init_params(3, 4, 2, 1);
  const Vector flat = p.flatten();
  CHECK(flat.size() == static_cast<Eigen::Index>(p.num_params()));
  CHECK(flat(1) == p.w1(1, 0));
  CHECK(flat(3) == p.w1(0, 1));
  auto q = GcnParams::zeros(3, 4, 2);
  q.assign(flat);
  CHECK(q == p);
  CHECK_THROWS(q.assign(Vector::Zero(3)));
}

TEST_CASE("softmax_row") {
  Vector z(2);
  z << 0, 0;
  CHECK(softmax_row(z)(0) == doctest::Approx(0.5));
  Vector a(3), b(3);
  a << 0.3, -1.2, 2.0;
  b = a.array() + 7.0;
  CHECK((softmax_row(a) - softmax_row(b)).cwiseAbs().maxCoeff() < 1e-15);
  Vector big(2);
  big << 1000, 0;
  const Vector p = softmax_row(big);
  CHECK(std::isfinite(p(0)));
  CHECK(p(0) == doctest::Approx(1.0));
  CHECK(p(1) >= 0.0);
  CHECK(p(1) < 1e-300);
}

TEST_CASE("forward") {
  SUBCASE("zero parameters give uniform probabilities") {
    const auto inst = random_instance(6, 3, 4, 4, 0);
    const GcnInput in(normalized_adjacency(inst.graph), inst.x);
    const auto t = forward(GcnParams::zeros(3, 4, 4), in);
    CHECK(t.z.isZero(0.0));
    CHECK((t.p.array() - 0.25).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("single isolated node in the linear regime") {
    Matrix x(1, 2);
    x << 0.5, 1.5;
    GcnParams p = GcnParams::zeros(2, 2, 2);
    p.w1 << 1, 2, 3, 4;
    p.b1 << 0.1, 0.2;
    p.w2 << 1, -1, 0.5, 2;
    p.b2 << 0.3, -0.3;
    const GcnInput in(normalized_adjacency(Graph(1, {})), x);
    const auto t = forward(p, in);
    const Matrix expected = ((x * p.w1).rowwise() + p.b1.transpose()) * p.w2 + p.b2.transpose();
    CHECK((t.z - expected).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("rows are probability vectors") {
    const auto inst = random_instance(20, 5, 6, 3, 2);
    const auto t = forward(inst.params, normalized_adjacency(inst.graph), EmbeddingMatrix(inst.x));
    for (Eigen::Index i = 0; i < t.p.rows(); ++i) {
      CHECK(std::abs(t.p.row(i).sum() - 1.0) < 1e-12);
      CHECK(t.p.row(i).minCoeff() > 0.0);
    }
    CHECK(((t.h_pre.array() <= 0.0) == (t.h.array() == 0.0)).all());
  }
  SUBCASE("node relabeling permutes the logits") {
    const auto inst = random_instance(15, 4, 5, 3, 3);
    std::vector<NodeId> perm(15);
    std::iota(perm.begin(), perm.end(), NodeId{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(7));
    std::vector<std::pair<NodeId, NodeId>> edges;
    for (auto [u, v] : inst.graph.edges()) edges.emplace_back(perm[u], perm[v]);
    Matrix px(15, 4);
    for (NodeId i = 0; i < 15; ++i) px.row(static_cast<Eigen::Index>(perm[i])) = inst.x.row(static_cast<Eigen::Index>(i));
    const auto a = forward(inst.params, GcnInput(normalized_adjacency(inst.graph), inst.x));
    const auto b = forward(inst.params, GcnInput(normalized_adjacency(Graph(15, edges)), px));
    for (NodeId i = 0; i < 15; ++i) {
      CHECK((a.z.row(static_cast<Eigen::Index>(i)) - b.z.row(static_cast<Eigen::Index>(perm[i])))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
    }
  }
  SUBCASE("shape mismatch") {
    const auto inst = random_instance(5, 3, 4, 2, 4);
    CHECK_THROWS_AS(forward(GcnParams::zeros(4, 4, 2), GcnInput(normalized_adjacency(inst.graph), inst.x)),
                    ConfigError);
  }
}

TEST_CASE("backward matches central finite differences") {
  constexpr double step = 1e-6;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = random_instance(8 + seed % 10, 2 + seed % 6, 2 + seed % 7, 2 + seed % 4, seed);
    const GcnInput in(normalized_adjacency(inst.graph), inst.x);
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix r(inst.x.rows(), inst.params.w2.cols());
    for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = unif(rng);

    const auto trace = forward(inst.params, in);
    const Vector analytic = backward(inst.params, in, trace, weighted_log_prob_grad(trace.z, r)).flatten();
    const Vector theta = inst.params.flatten();
    Vector numeric(theta.size());
    GcnParams probe = inst.params;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      Vector t = theta;
      t(j) += step;
      probe.assign(t);
      const double up = weighted_log_prob(forward(probe, in).z, r);
      t(j) = theta(j) - step;
      probe.assign(t);
      const double down = weighted_log_prob(forward(probe, in).z, r);
      numeric(j) = (up - down) / (2.0 * step);
    }
    CHECK(rel_error(analytic, numeric) <= 1e-6);
  }
}

TEST_CASE("backward edge cases") {
  const auto inst = random_instance(10, 3, 4, 3, 5);
  const GcnInput in(normalized_adjacency(inst.graph), inst.x);
  const auto trace = forward(inst.params, in);
  CHECK(backward(inst.params, in, trace, Matrix::Zero(10, 3)).flatten().isZero(0.0));
  CHECK_THROWS_AS(backward(inst.params, in, trace, Matrix::Zero(9, 3)), ConfigError);
}

TEST_CASE("probe logits and analytic jacobian") {
  const auto inst = random_instance(14, 4, 5, 3, 8);
  const GcnInput in(normalized_adjacency(inst.graph), inst.x);
  const std::vector<NodeId> rows{3, 0, 11};
  const auto trace = forward(inst.params, in);
  const Matrix z = probe_logits(inst.params, in, rows);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    CHECK((z.row(static_cast<Eigen::Index>(k)) - trace.z.row(static_cast<Eigen::Index>(rows[k])))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }

  // Each Jacobian row equals backward() with a one-hot dZ.
  const Matrix jac = logit_jacobian(inst.params, in, rows);
  CHECK(jac.cols() == static_cast<Eigen::Index>(inst.params.num_params()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (Eigen::Index c = 0; c < 3; ++c) {
      Matrix dz = Matrix::Zero(14, 3);
      dz(static_cast<Eigen::Index>(rows[k]), c) = 1.0;
      const Vector g = backward(inst.params, in, trace, dz).flatten();
      CHECK((jac.row(static_cast<Eigen::Index>(k) * 3 + c).transpose() - g).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  // Bounds agree with a brute-force scan over the analytic Jacobian.
  const auto bounds = estimate_logit_bounds(inst.params, in, rows);
  CHECK(bounds.g == doctest::Approx(jac.cwiseAbs().maxCoeff()).epsilon(1e-6));
  CHECK(bounds.m > 0.0);
  CHECK(std::isfinite(bounds.m));
}

TEST_CASE("params save and load") {
  testutil::TempDir dir;
  auto p = init_params(4, 3, 2, 17);
  p.b1 << 0.1, -0.2, 0.3;
  save_params(p, 17, dir.path());
  CHECK(load_params(dir.path()) == p);
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  testutil::write_file(dir / "W2.txt", "1 1\n0\n");
  CHECK_THROWS_AS(load_params(dir.path()), ParseError);
}
