#pragma once

#include <cstdint>
#include <vector>

#include "dense/bench.hpp"
#include "dense/gnn.hpp"

namespace dense {

// ---- outlier tolerance -----------------------------------------------------

struct OutlierGradients {
  double g_be = 0.0;      // d L_BE / d l_{o,m'}
  double g_ie = 0.0;      // d (CE(p_o, y) / |B|) / d l_{o,m'}
  double bundle_m = 0.0;  // p(B)_{m'}
  double outlier_m = 0.0; // p_o_{m'}
  ClassId m_prime = 0;
};

/// Central finite-difference derivatives for a bundle given as per-member
/// score rows (p_i = softmax(row i), p(B) = softmax(mean row)).
OutlierGradients outlier_gradients(const Matrix& scores, std::size_t outlier, ClassId label, double step = 1e-5);

struct Theorem1Report {
  std::size_t draws = 0;
  std::size_t kept = 0;  // trials meeting the label and confidence conditions
  std::size_t passed = 0;
  double pass_fraction = 0.0;
  double max_violation = 0.0;  // largest amount by which either side of the inequality fails
  double min_margin = 0.0;     // smallest g_IE - g_BE over kept trials
};

/// Draws random bundles until `trials` condition-satisfying ones are kept and
/// checks 0 <= g_BE <= g_IE within `tolerance`.
Theorem1Report verify_theorem1(std::size_t trials, std::size_t num_classes, std::size_t bundle_size,
                               std::uint64_t seed, double tolerance = 1e-10);

// ---- gradient bounds -------------------------------------------------------

struct Theorem2Point {
  bool zero_point = false;
  double g_hat = 0.0;
  double m_hat = 0.0;
  double grad_inf = 0.0;     // ||grad L_BE||_inf
  double grad_bound = 0.0;   // 2 G / |B|
  double hess_max = 0.0;     // max |d^2 L_BE / d theta_j d theta_k|
  double hess_bound = 0.0;   // 2 (M + G^2) / |B|
  double direct_grad_bound = 0.0;  // 2 G (1 - p(B)_y), from summing the members directly
  bool grad_ok = false;
  bool hess_ok = false;
};

struct Theorem2Report {
  std::size_t num_nodes = 0;
  std::size_t bundle_size = 0;
  std::size_t num_params = 0;
  std::vector<Theorem2Point> points;
  double smoothness_constant = 0.0;  // 2 n_d (M + G^2) / |B| with the largest G, M seen
  double max_observed_lipschitz = 0.0;
  bool all_grad_ok = false;
  bool all_hess_ok = false;
  bool lipschitz_ok = false;
};

/// Single-bundle instance (n = 8, |B| = 5, d = h = 6, C = 4); evaluated at
/// theta = 0 and `random_points` random parameter vectors.
Theorem2Report verify_theorem2(std::size_t random_points, std::uint64_t seed, std::size_t lipschitz_pairs = 50);

// ---- convergence -----------------------------------------------------------

struct Theorem3Report {
  std::size_t epochs_run = 0;
  double eta = 0.0;
  double g_hat = 0.0;
  double m_hat = 0.0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  double max_increase = 0.0;  // largest L_{t+1} - L_t
  double final_grad_norm = 0.0;
  bool monotone = false;
  bool converged = false;

  // Same run with refinement enabled.
  std::size_t refine_events = 0;
  double refine_max_increase = 0.0;  // over steps not crossing a refinement epoch
  bool refine_monotone = false;
};

/// Standard synthetic benchmark with noiseless oracle labels, learning rate
/// from the derivative estimates, at most `max_epochs` epochs.
Theorem3Report verify_theorem3(std::uint64_t seed, std::size_t max_epochs = 5000, double grad_tol = 1e-3,
                               double increase_tol = 1e-9);

}  // namespace dense
