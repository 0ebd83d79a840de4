#pragma once

// Reference posteriors: latent-space HMC, self-normalized importance
// sampling from the prior, and the closed-form conjugate-Gaussian case.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>

#include <Eigen/Dense>

#include "ganflow/forward_models.hpp"
#include "ganflow/gan_prior.hpp"
#include "ganflow/prior_data.hpp"

namespace ganflow::samplers {

using Tensor = Eigen::MatrixXd;

// ---- HMC ----------------------------------------------------------------------------

/// Log density and its gradient at z. Returning a non-finite value (or
/// throwing NumericalError) rejects the proposal.
using LogDensityFn = std::function<double(const Eigen::VectorXd& z, Eigen::VectorXd& grad)>;

struct HmcConfig {
  int n_leapfrog = 10;
  double target_accept = 0.75;
  double burn_in_fraction = 0.5;
  double initial_step = 0.01;
  /// Each trajectory uses eps * U(1 - j, 1 + j); breaks the resonance of a
  /// fixed trajectory length with the target's periods. 0 disables.
  double step_jitter = 0.2;
  /// Kept samples after burn-in (and thinning).
  std::size_t n_samples = 1000;
  int thin = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct HmcResult {
  Tensor samples;                  // n_samples x n_z
  Eigen::VectorXd log_density;     // at each kept sample
  double acceptance_rate = 0;      // mean acceptance probability after burn-in
  double burn_in_acceptance = 0;
  double step_size = 0;            // frozen value used after burn-in
  std::size_t n_burn_in = 0;
  std::size_t n_iterations = 0;
  std::uint64_t gradient_evaluations = 0;
  bool all_rejected = false;       // no proposal accepted after burn-in
};

/// `steps` leapfrog steps of size eps with unit mass; on return z, p, logp and
/// grad describe the end point.
void leapfrog(const LogDensityFn& f, Eigen::VectorXd& z, Eigen::VectorXd& p, double eps, int steps, double& logp,
              Eigen::VectorXd& grad);

/// Burn-in iterations adapt log eps += 0.1/sqrt(t) (alpha_t - target) and
/// are discarded; the step size is frozen afterwards.
HmcResult hmc_sample(const LogDensityFn& f, const Eigen::VectorXd& z0, const HmcConfig& cfg);

/// log p(y | unrescale(G(z))) + log p_Z(z) with its autodiff gradient. The
/// returned function owns a private graph and is not thread-safe.
LogDensityFn latent_log_posterior(std::shared_ptr<const gan::Generator> generator, const fwd::ForwardProblem& problem);

/// One latent sample per CSV row, columns z0..z{n-1}.
void write_samples_csv(const std::filesystem::path& path, const Tensor& samples, const std::string& prefix = "z");
Tensor read_samples_csv(const std::filesystem::path& path);

// ---- importance sampling ------------------------------------------------------------

struct ImportanceResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  Eigen::VectorXd mean_se;  // sqrt(sum_i w_i^2 (x_i - mean)^2)
  double ess = 0;           // 1 / sum w_i^2
  bool unreliable = false;  // ess < 50
  std::size_t n = 0;
  double log_evidence = 0;  // log mean_i exp(loglik_i)
};

/// Normalized weights from log-likelihoods via log-sum-exp.
Eigen::VectorXd normalized_weights(const Eigen::VectorXd& loglik);

/// Self-normalized estimates from draws x_i (rows) of the prior with
/// log-likelihoods loglik_i.
ImportanceResult importance_estimate(const Tensor& x, const Eigen::VectorXd& loglik);

/// Streaming version for large n: sample(i) must be a deterministic function
/// of i. Log-likelihoods are evaluated in parallel and reduced in index order.
ImportanceResult importance_oracle(const std::function<Eigen::VectorXd(std::size_t)>& sample,
                                   const std::function<double(const Eigen::VectorXd&)>& loglik, std::size_t n,
                                   unsigned workers = 0);

/// Importance sampling over the rectangle prior: corners drawn per index from
/// (seed, i); log-likelihoods are memoized per distinct snapped rectangle.
ImportanceResult rect_importance_oracle(const prior::RectPriorConfig& cfg, const fwd::ForwardProblem& problem,
                                        std::size_t n, std::uint64_t seed, unsigned workers = 0);

/// Exact posterior moments over the rectangle prior: every snapped rectangle
/// weighted by its prior probability (uniform corners, rounding to nodes).
ImportanceResult rect_exact_posterior(const prior::RectPriorConfig& cfg, const fwd::ForwardProblem& problem);

// ---- conjugate Gaussian ---------------------------------------------------------------

/// Affine generator x = A z + b, linear forward y = F x + noise(sigma2), z ~ N(0, I).
struct ConjugateCase {
  Tensor a_g;
  Eigen::VectorXd b_g;
  Tensor f_lin;
  double sigma2 = 1.0;
  Eigen::VectorXd y_hat;

  void validate() const;
};

struct ConjugatePosterior {
  Eigen::VectorXd mean;
  Tensor cov;
  Tensor precision;
  /// log N(y_hat; F b, M M^T + sigma2 I), M = F A.
  double log_evidence = 0;
};

ConjugatePosterior conjugate_posterior(const ConjugateCase& c);

/// Random case: A ~ N(0, 1/n_z) entries, b ~ N(0, 0.1^2), F ~ N(0, 1/n_x),
/// y_hat simulated from z_true ~ N(0, I).
ConjugateCase random_conjugate_case(Eigen::Index n_z, Eigen::Index n_x, Eigen::Index n_y, double sigma2,
                                    std::uint64_t seed);

}  // namespace ganflow::samplers
