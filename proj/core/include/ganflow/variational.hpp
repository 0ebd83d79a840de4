#pragma once

// Reverse-KL variational inference in the latent space: a flow H pushes
// z ~ N(0, I) towards the latent posterior p(z | y) ∝ p(y | G(z)) p_Z(z).

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "ganflow/flows.hpp"
#include "ganflow/forward_models.hpp"
#include "ganflow/gan_prior.hpp"
#include "ganflow/optim.hpp"

namespace ganflow::vi {

using Tensor = Eigen::MatrixXd;

struct VIConfig {
  int epochs = 2000;  // one batch per epoch
  int batch = 32;
  AdamConfig adam{0.002, 0.9, 0.999, 1e-8};
  /// Cosine annealing over the epoch budget from adam.lr down to
  /// adam.lr * lr_final_factor; 1 keeps the rate constant.
  double lr_final_factor = 0.01;
  /// When the moving average of the loss has not improved for `patience`
  /// epochs, anneal to the final rate over `patience` more epochs and stop
  /// (stop at once with a constant rate); 0 disables.
  int patience = 500;
  int ma_window = 50;
  int history_stride = 1;
  std::filesystem::path history_path;
  int log_every = 0;

  void validate() const;
};

struct LatentPosteriorModel {
  flows::FlowModel flow;
  std::shared_ptr<const gan::Generator> generator;
  fwd::ForwardProblem problem;
  /// Drop the likelihood (the sigma^2 -> infinity limit): the target is p_Z.
  bool prior_only = false;

  void validate() const;
};

/// log N(z; 0, I) per row.
Eigen::VectorXd log_standard_normal(const Tensor& z);
ad::Var log_standard_normal(ad::Var z);

/// Per-row pieces of the loss; loss = mean(-(loglik + logprior + logdet)).
struct LossVars {
  ad::Var loss;     // 1x1
  ad::Var loglik;   // n x 1, log p(y | unrescale(G(H(z))))
  ad::Var logprior; // n x 1, log p_Z(H(z))
  ad::Var logdet;   // n x 1
};

LossVars nf_loss(const LatentPosteriorModel& model, const ad::Bindings& flow_params, ad::Var z);

struct LossValues {
  double loss = 0;
  /// Signed contributions to the loss: loss = loglik_term + prior_term + logdet_term.
  double loglik_term = 0, prior_term = 0, logdet_term = 0;
  Eigen::VectorXd per_sample;  // -(loglik + logprior + logdet)
};

/// Frozen evaluation of the loss on a batch (counts forward solves unless prior_only).
LossValues nf_loss_value(const LatentPosteriorModel& model, const Tensor& z);

struct VIRecord {
  int step;
  int epoch;
  double loss, loglik_term, prior_term, logdet_term;
  std::uint64_t forward_solves;  // cumulative
};

struct VIResult {
  std::vector<VIRecord> history;
  int epochs_run = 0;
  bool stopped_early = false;
  std::uint64_t forward_solves = 0;
};

/// Adam on the flow parameters only. Uninitialized actnorm layers are
/// initialized on the first batch.
VIResult train_flow(LatentPosteriorModel& model, const VIConfig& cfg, std::uint64_t seed);

void write_vi_history(const std::filesystem::path& path, const std::vector<VIRecord>& history);

/// H(z) for z ~ N(0, I) from the stream (seed, 0).
Tensor pushforward_samples(const flows::FlowModel& flow, std::size_t n, std::uint64_t seed);

struct ElboReport {
  std::size_t n = 0;
  double loss_mean = 0, loss_se = 0;
  double loglik_term = 0, prior_term = 0, logdet_term = 0;
  /// ELBO = E_q[log p(y|x) + log p_Z(H z) + log det - log q0(z)]
  double elbo = 0, elbo_se = 0;
  /// log p(y) - ELBO, when the evidence is known.
  std::optional<double> kl;
  Eigen::VectorXd mean;  // pushforward sample moments
  Tensor cov;
};

ElboReport elbo_diagnostics(const LatentPosteriorModel& model, std::size_t n, std::uint64_t seed,
                            std::optional<double> log_evidence = std::nullopt);

/// KL(N(m0, S0) || N(m1, S1)).
double gaussian_kl(const Eigen::VectorXd& m0, const Tensor& s0, const Eigen::VectorXd& m1, const Tensor& s1);

}  // namespace ganflow::vi
