#include "rgmp/gmm.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <string>

#include "rgmp/errors.hpp"
#include "rgmp/rng.hpp"

namespace rgmp {

namespace {

constexpr int kDim = 6;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)

Eigen::Map<const Eigen::Matrix<double, kDim, 1>> as_vec(const ActionVector& a) {
  return Eigen::Map<const Eigen::Matrix<double, kDim, 1>>(a.data());
}

Eigen::LLT<Eigen::MatrixXd> factorize(const Eigen::MatrixXd& sigma, int k) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw ValidationError("component " + std::to_string(k) +
                          " covariance is not positive definite");
  }
  return llt;
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  double acc = 0.0;
  const auto& L = llt.matrixLLT();
  for (int i = 0; i < L.rows(); ++i) acc += std::log(L(i, i));
  return 2.0 * acc;
}

// Sample covariance (maximum-likelihood normalization, divisor N).
Eigen::MatrixXd ml_covariance(const Eigen::MatrixXd& X) {
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(X.rows());
}

// Per-sample component log-densities: out(i,k) = log alpha_k + log N(x_i|...).
Eigen::MatrixXd component_log_joint(const Eigen::MatrixXd& X, const GmmParams& p) {
  const int n = static_cast<int>(X.rows());
  Eigen::MatrixXd logp(n, p.K);
  for (int k = 0; k < p.K; ++k) {
    const Eigen::LLT<Eigen::MatrixXd> llt = factorize(p.sigma[static_cast<std::size_t>(k)], k);
    const double c = std::log(p.alpha[static_cast<std::size_t>(k)]) -
                     0.5 * (kDim * kLog2Pi + log_det_from_llt(llt));
    const Eigen::MatrixXd centered = X.rowwise() - p.mu.row(k);
    // Solve L z = (x - mu) per sample; squared norms give the quadratic forms.
    const Eigen::MatrixXd z =
        llt.matrixL().solve(centered.transpose());
    logp.col(k) = (-0.5 * z.colwise().squaredNorm().transpose()).array() + c;
  }
  return logp;
}

}  // namespace

void GmmParams::validate() const {
  if (K < 1) throw ValidationError("mixture needs at least one component");
  if (static_cast<int>(alpha.size()) != K) {
    throw ValidationError("prior count does not match component count");
  }
  double s = 0.0;
  for (int k = 0; k < K; ++k) {
    const double a = alpha[static_cast<std::size_t>(k)];
    if (!(a > 0.0)) {
      throw ValidationError("prior of component " + std::to_string(k) +
                            " must be positive");
    }
    s += a;
  }
  if (std::fabs(s - 1.0) > 1e-12) {
    throw ValidationError("priors sum to " + std::to_string(s) + ", expected 1");
  }
  if (mu.rows() != K || mu.cols() != kDim) {
    throw ValidationError("mean matrix must be K x 6");
  }
  if (static_cast<int>(sigma.size()) != K) {
    throw ValidationError("covariance count does not match component count");
  }
  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd& s_k = sigma[static_cast<std::size_t>(k)];
    if (s_k.rows() != kDim || s_k.cols() != kDim) {
      throw ValidationError("covariance of component " + std::to_string(k) +
                            " must be 6 x 6");
    }
    if ((s_k - s_k.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
      throw ValidationError("covariance of component " + std::to_string(k) +
                            " is not symmetric");
    }
  }
}

Responsibilities e_step(const Eigen::MatrixXd& X, const GmmParams& p, double* total_ll) {
  p.validate();
  if (X.cols() != kDim) throw ValidationError("samples must have 6 columns");
  const int n = static_cast<int>(X.rows());
  if (n < 1) throw ValidationError("empty sample matrix");

  const Eigen::MatrixXd logp = component_log_joint(X, p);
  Responsibilities r;
  r.gamma.resize(n, p.K);
  double ll = 0.0;
  for (int i = 0; i < n; ++i) {
    const double m = logp.row(i).maxCoeff();
    const Eigen::ArrayXd e = (logp.row(i).array() - m).exp();
    const double z = e.sum();
    r.gamma.row(i) = (e / z).matrix();
    ll += m + std::log(z);
  }
  if (total_ll != nullptr) *total_ll = ll;
  return r;
}

EmResult em_fit(const Eigen::MatrixXd& X, int K, const EmOptions& opt) {
  if (X.cols() != kDim) throw ValidationError("samples must have 6 columns");
  const int n = static_cast<int>(X.rows());
  if (K < 1) throw ValidationError("component count must be >= 1");
  if (n < K) {
    throw ValidationError("need at least K=" + std::to_string(K) + " samples, got " +
                          std::to_string(n));
  }
  if (!(opt.tol > 0.0)) throw ValidationError("tolerance must be positive");
  if (opt.ridge < 0.0) throw ValidationError("ridge must be non-negative");
  if (opt.max_iter < 1) throw ValidationError("max_iter must be >= 1");

  const Eigen::MatrixXd ridge_eye = opt.ridge * Eigen::MatrixXd::Identity(kDim, kDim);
  const Eigen::MatrixXd global_cov = ml_covariance(X) + ridge_eye;

  // k-means++-style seeding: spread the initial means across the data.
  Rng rng(splitmix64(opt.seed));
  EmResult res;
  GmmParams& p = res.params;
  p.K = K;
  p.alpha.assign(static_cast<std::size_t>(K), 1.0 / K);
  p.mu.resize(K, kDim);
  p.sigma.assign(static_cast<std::size_t>(K), global_cov);

  std::vector<double> d2(static_cast<std::size_t>(n),
                         std::numeric_limits<double>::infinity());
  int first = rng.uniform_int(n);
  p.mu.row(0) = X.row(first);
  for (int k = 1; k < K; ++k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = (X.row(i) - p.mu.row(k - 1)).squaredNorm();
      if (d < d2[static_cast<std::size_t>(i)]) d2[static_cast<std::size_t>(i)] = d;
      total += d2[static_cast<std::size_t>(i)];
    }
    int pick;
    if (total > 0.0) {
      // CDF inversion over the squared-distance weights.
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(n);  // all remaining points coincide with a center
    }
    p.mu.row(k) = X.row(pick);
  }

  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    double ll = 0.0;
    // E-step (inlined so the per-sample log-likelihoods stay available for
    // re-seeding collapsed components from the worst-fit sample).
    const Eigen::MatrixXd logp = component_log_joint(X, p);
    Eigen::MatrixXd gamma(n, K);
    Eigen::VectorXd sample_ll(n);
    for (int i = 0; i < n; ++i) {
      const double m = logp.row(i).maxCoeff();
      const Eigen::ArrayXd e = (logp.row(i).array() - m).exp();
      const double z = e.sum();
      gamma.row(i) = (e / z).matrix();
      sample_ll(i) = m + std::log(z);
    }
    ll = sample_ll.sum();
    res.ll_trace.push_back(ll);
    res.iterations = iter + 1;
    if (std::fabs(ll - prev_ll) < opt.tol) {
      res.converged = true;
      break;
    }
    prev_ll = ll;

    // M-step with collapse re-seeding; effective counts keep priors normalized.
    const Eigen::VectorXd nk = gamma.colwise().sum();
    Eigen::VectorXd nk_eff = nk;
    for (int k = 0; k < K; ++k) {
      if (nk(k) < 1e-10) {
        int worst;
        sample_ll.minCoeff(&worst);
        p.mu.row(k) = X.row(worst);
        p.sigma[static_cast<std::size_t>(k)] = global_cov;
        nk_eff(k) = 1.0;
        ++res.reseeds;
        std::cerr << "[em] component " << k << " collapsed at iteration " << iter
                  << "; re-seeded from worst-fit sample " << worst << "\n";
        continue;
      }
      p.mu.row(k) = (gamma.col(k).transpose() * X) / nk(k);
      const Eigen::MatrixXd centered = X.rowwise() - p.mu.row(k);
      Eigen::MatrixXd s =
          (centered.transpose() * (centered.array().colwise() * gamma.col(k).array()).matrix()) /
          nk(k);
      s = 0.5 * (s + s.transpose()) + ridge_eye;  // symmetrize, then floor
      p.sigma[static_cast<std::size_t>(k)] = s;
    }
    const double nk_total = nk_eff.sum();
    for (int k = 0; k < K; ++k) p.alpha[static_cast<std::size_t>(k)] = nk_eff(k) / nk_total;
  }
  p.validate();
  return res;
}

double gmm_density(const ActionVector& x, const GmmParams& p) {
  p.validate();
  Eigen::MatrixXd row(1, kDim);
  row.row(0) = as_vec(x).transpose();
  const Eigen::MatrixXd logp = component_log_joint(row, p);
  const double m = logp.row(0).maxCoeff();
  return std::exp(m) * (logp.row(0).array() - m).exp().sum();
}

double mahalanobis_distance(const ActionVector& a, const GmmParams& p, int k) {
  if (k < 0 || k >= p.K) {
    throw ValidationError("component index " + std::to_string(k) + " out of range 0.." +
                          std::to_string(p.K - 1));
  }
  const Eigen::LLT<Eigen::MatrixXd> llt = factorize(p.sigma[static_cast<std::size_t>(k)], k);
  const Eigen::VectorXd diff = as_vec(a) - p.mu.row(k).transpose();
  const Eigen::VectorXd z = llt.matrixL().solve(diff);
  return std::sqrt(z.squaredNorm());
}

int nearest_component(const ActionVector& a, const GmmParams& p) {
  p.validate();
  int best = 0;
  double best_l = mahalanobis_distance(a, p, 0);
  for (int k = 1; k < p.K; ++k) {
    const double l = mahalanobis_distance(a, p, k);
    if (l < best_l) {
      best_l = l;
      best = k;
    }
  }
  return best;
}

ActionVector select_nearest(const ActionVector& a, const GmmParams& p) {
  const int k = nearest_component(a, p);
  ActionVector out{};
  for (int j = 0; j < kDim; ++j) out[static_cast<std::size_t>(j)] = p.mu(k, j);
  return out;
}

AggregateResult conditional_aggregate(const ActionVector& a, const GmmParams& p) {
  p.validate();
  std::vector<double> l(static_cast<std::size_t>(p.K));
  double l_min = std::numeric_limits<double>::infinity();
  for (int k = 0; k < p.K; ++k) {
    l[static_cast<std::size_t>(k)] = mahalanobis_distance(a, p, k);
    l_min = std::min(l_min, l[static_cast<std::size_t>(k)]);
  }
  // Shift by l_min before exponentiating; the common factor cancels in the
  // normalization but keeps the weights representable for distant queries.
  AggregateResult res;
  res.weights.resize(static_cast<std::size_t>(p.K));
  double z = 0.0;
  for (int k = 0; k < p.K; ++k) {
    const double w = p.alpha[static_cast<std::size_t>(k)] *
                     std::exp(-(l[static_cast<std::size_t>(k)] - l_min));
    res.weights[static_cast<std::size_t>(k)] = w;
    z += w;
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kDim);
  res.cov = Eigen::MatrixXd::Zero(kDim, kDim);
  for (int k = 0; k < p.K; ++k) {
    const double w = res.weights[static_cast<std::size_t>(k)] / z;
    res.weights[static_cast<std::size_t>(k)] = w;
    mean += w * p.mu.row(k).transpose();
    res.cov += w * w * p.sigma[static_cast<std::size_t>(k)];
  }
  for (int j = 0; j < kDim; ++j) res.mean[static_cast<std::size_t>(j)] = mean(j);
  return res;
}

ActionVector refine(const ActionVector& a, const GmmParams& p, RefineMode mode) {
  if (mode == RefineMode::Nearest) return select_nearest(a, p);
  return conditional_aggregate(a, p).mean;
}

}  // namespace rgmp
