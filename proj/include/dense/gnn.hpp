#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dense/graph.hpp"

namespace dense {

/// Weights of the two-layer GCN. Also used as the gradient container.
struct GcnParams {
  Matrix w1;  // d x h
  Vector b1;  // h
  Matrix w2;  // h x C
  Vector b2;  // C

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(w1.rows()); }
  std::size_t hidden_dim() const noexcept { return static_cast<std::size_t>(w1.cols()); }
  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(w2.cols()); }

  // d*h + h + h*C + C
  std::size_t num_params() const noexcept;

  // Flat layout: W1 (column-major), b1, W2 (column-major), b2.
  Vector flatten() const;
  void assign(const Vector& flat);

  static GcnParams zeros(std::size_t d, std::size_t h, std::size_t c);
  bool operator==(const GcnParams& other) const;
};

/// Graph operator and features, with the first propagation A_hat * X cached.
struct GcnInput {
  GcnInput(SparseMatrix a_hat, Matrix x);

  SparseMatrix a_hat;
  Matrix x;
  Matrix ax;

  std::size_t num_nodes() const noexcept { return static_cast<std::size_t>(x.rows()); }
};

struct ForwardTrace {
  Matrix h_pre;  // n x h
  Matrix h;      // n x h, ReLU(h_pre)
  Matrix ah;     // n x h, A_hat * h
  Matrix z;      // n x C logits
  Matrix p;      // n x C row-softmax
};

/// Glorot-uniform weights, zero biases.
GcnParams init_params(std::size_t d, std::size_t h, std::size_t c, std::uint64_t seed);

/// Numerically stable softmax.
Vector softmax_row(const Eigen::Ref<const Vector>& z);
Matrix softmax_rows(const Matrix& z);

ForwardTrace forward(const GcnParams& params, const GcnInput& input);
ForwardTrace forward(const GcnParams& params, const SparseMatrix& a_hat, const EmbeddingMatrix& x);

/// Exact parameter gradient of a scalar loss given dLoss/dZ.
/// ReLU subgradient at 0 is 0.
GcnParams backward(const GcnParams& params, const GcnInput& input, const ForwardTrace& trace, const Matrix& dz);

/// Logits of the given rows only, evaluated on their two-hop support.
Matrix probe_logits(const GcnParams& params, const GcnInput& input, std::span<const NodeId> rows);

/// Analytic Jacobian d z_{i,c} / d theta for the given rows. Row index is
/// k * C + c for the k-th entry of `rows`; columns follow the flat layout.
Matrix logit_jacobian(const GcnParams& params, const GcnInput& input, std::span<const NodeId> rows);

struct LogitDerivativeBounds {
  double g = 0.0;  // max |d z_{i,c} / d theta_j|
  double m = 0.0;  // max |d^2 z_{i,c} / d theta_j d theta_k|
};

/// Central finite-difference estimates over the given rows: first derivatives
/// from perturbed logits, second derivatives from perturbed Jacobians.
LogitDerivativeBounds estimate_logit_bounds(const GcnParams& params, const GcnInput& input,
                                            std::span<const NodeId> rows, double step = 1e-5);

/// One text-matrix file per tensor plus manifest.json in `dir`.
void save_params(const GcnParams& params, std::uint64_t seed, const std::filesystem::path& dir);
GcnParams load_params(const std::filesystem::path& dir);

}  // namespace dense
