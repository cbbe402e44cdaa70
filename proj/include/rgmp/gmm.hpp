#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "rgmp/model.hpp"

namespace rgmp {

// Mixture of K Gaussians over the 6-D joint space.
struct GmmParams {
  int K = 0;
  std::vector<double> alpha;           // priors, each > 0, summing to 1
  Eigen::MatrixXd mu;                  // K x 6 component means (radians)
  std::vector<Eigen::MatrixXd> sigma;  // K symmetric positive-definite 6x6 (radians^2)

  void validate() const;  // throws ValidationError
};

// Posterior assignment matrix of one E-step: gamma(i,k) = p(component k | x_i).
struct Responsibilities {
  Eigen::MatrixXd gamma;  // N x K, entries in [0,1], every row sums to 1
};

struct EmOptions {
  std::uint64_t seed = 0;
  double ridge = 1e-6;  // added to every covariance each M-step
  double tol = 1e-6;    // absolute total log-likelihood improvement threshold
  int max_iter = 200;
};

struct EmResult {
  GmmParams params;
  std::vector<double> ll_trace;  // total data log-likelihood at each E-step
  int iterations = 0;            // E-steps performed
  int reseeds = 0;               // collapsed components re-seeded
  bool converged = false;
};

// Expectation-maximization over X (one 6-D sample per row), seeded k-means++
// style from the data. Collapsed components (vanishing responsibility mass) are
// re-seeded from the worst-fit sample and the event is logged to stderr.
EmResult em_fit(const Eigen::MatrixXd& X, int K, const EmOptions& opt);

// One E-step under fixed parameters; optionally reports the total log-likelihood.
Responsibilities e_step(const Eigen::MatrixXd& X, const GmmParams& p, double* total_ll);

// Mixture density sum_k alpha_k * N(x | mu_k, sigma_k).
double gmm_density(const ActionVector& x, const GmmParams& p);

// l_k = sqrt((a - mu_k)^T sigma_k^{-1} (a - mu_k)), via a Cholesky solve.
double mahalanobis_distance(const ActionVector& a, const GmmParams& p, int k);

// argmin_k l_k; ties resolve to the lowest index.
int nearest_component(const ActionVector& a, const GmmParams& p);
ActionVector select_nearest(const ActionVector& a, const GmmParams& p);

// Consistency-weighted aggregation: weights proportional to alpha_k*exp(-l_k),
// renormalized; mean = sum w_k mu_k, covariance = sum w_k^2 sigma_k.
struct AggregateResult {
  ActionVector mean{};
  Eigen::MatrixXd cov;
  std::vector<double> weights;
};
AggregateResult conditional_aggregate(const ActionVector& a, const GmmParams& p);

enum class RefineMode { Nearest, Aggregate };

// Nearest mode returns the closest component mean; aggregate mode the
// consistency-weighted mean.
ActionVector refine(const ActionVector& a, const GmmParams& p, RefineMode mode);

}  // namespace rgmp
