#pragma once

// WGAN-GP prior: generator G (dense net with tanh output, or an analytic
// affine map used as an oracle), critic D, losses and the training loop.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ganflow/autodiff.hpp"
#include "ganflow/nn.hpp"
#include "ganflow/optim.hpp"
#include "ganflow/param_vector.hpp"
#include "ganflow/prior_data.hpp"

namespace ganflow::gan {

using Tensor = Eigen::MatrixXd;

enum class GeneratorKind { Dense, Affine };

class Generator {
 public:
  /// n_z -> hidden... -> n_x, LeakyReLU(0.2) hidden layers, tanh output.
  static Generator dense(Eigen::Index n_z, Eigen::Index n_x, std::vector<Eigen::Index> hidden, std::uint64_t seed);
  /// G(z) = A z + b with A (n_x x n_z) and b (n_x); the rescaler defaults to
  /// the identity map [-1, 1].
  static Generator affine(const Tensor& a, const Eigen::VectorXd& b);

  [[nodiscard]] GeneratorKind kind() const { return kind_; }
  [[nodiscard]] std::string kind_name() const { return kind_ == GeneratorKind::Dense ? "dense" : "affine"; }
  [[nodiscard]] Eigen::Index n_z() const { return n_z_; }
  [[nodiscard]] Eigen::Index n_x() const { return n_x_; }
  [[nodiscard]] const std::vector<Eigen::Index>& hidden() const { return hidden_; }
  [[nodiscard]] const ParamVector& params() const { return params_; }
  [[nodiscard]] ParamVector& params() { return params_; }

  /// Affine oracle parameters.
  [[nodiscard]] Tensor matrix() const;
  [[nodiscard]] Eigen::VectorXd offset() const;

  /// Output space values (rows of z in, rows of G(z) out).
  [[nodiscard]] ad::Var forward(const ad::Bindings& p, ad::Var z) const;
  [[nodiscard]] Tensor forward(const Tensor& z) const;
  /// Data space: unrescale(G(z)).
  [[nodiscard]] Tensor forward_data(const Tensor& z) const { return rescaler.unrescale(forward(z)); }

  /// x = unrescale(G(z)) with z ~ N(0, I), from the stream (seed, 0).
  [[nodiscard]] Tensor sample_prior(std::size_t n, std::uint64_t seed) const;

  /// GFPARAMS payload at `path` plus a TOML sidecar at path.replace_extension(".toml").
  void save(const std::filesystem::path& path) const;
  static Generator load(const std::filesystem::path& path);

  prior::Rescaler rescaler{-1.0, 1.0};

 private:
  [[nodiscard]] nn::Mlp mlp() const;

  GeneratorKind kind_ = GeneratorKind::Dense;
  Eigen::Index n_z_ = 0;
  Eigen::Index n_x_ = 0;
  std::vector<Eigen::Index> hidden_;
  ParamVector params_;
};

class Critic {
 public:
  /// n_x -> hidden... -> 1, LeakyReLU(0.2), no output activation.
  static Critic dense(Eigen::Index n_x, std::vector<Eigen::Index> hidden, std::uint64_t seed);
  /// D(x) = w^T x + c; used by tests and diagnostics.
  static Critic linear(const Eigen::RowVectorXd& w, double c);

  [[nodiscard]] Eigen::Index n_x() const { return mlp_.widths.front(); }
  [[nodiscard]] const std::vector<Eigen::Index>& widths() const { return mlp_.widths; }
  [[nodiscard]] const ParamVector& params() const { return params_; }
  [[nodiscard]] ParamVector& params() { return params_; }

  [[nodiscard]] ad::Var forward(const ad::Bindings& p, ad::Var x) const { return mlp_.forward(p, x); }
  [[nodiscard]] Tensor forward(const Tensor& x) const { return mlp_.forward(params_, x); }

  void save(const std::filesystem::path& path) const;

 private:
  nn::Mlp mlp_;
  ParamVector params_;
};

using CriticFn = std::function<ad::Var(ad::Var)>;

/// mean_i (||grad_x D(x~_i)|| - 1)^2 at x~_i = eps_i x_real_i + (1 - eps_i) x_fake_i.
/// The gradient is emitted as graph nodes, so the result is differentiable
/// with respect to whatever D's parameters are bound to.
ad::Var gradient_penalty(const CriticFn& critic, ad::Var x_real, ad::Var x_fake, const Eigen::VectorXd& eps);
/// Debug-only substitute: the gradient norm is replaced by the central
/// difference of D along the interpolation direction (step h).
ad::Var gradient_penalty_fd(const CriticFn& critic, ad::Var x_real, ad::Var x_fake, const Eigen::VectorXd& eps,
                            double h = 1e-4);

/// Value of the penalty for a concrete critic, eps_i ~ U(0, 1) per pair.
double gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& x_fake, Rng& rng);

struct WganLosses {
  ad::Var critic_loss;
  ad::Var gen_loss;
  ad::Var penalty;
  ad::Var wasserstein;  // mean D(real) - mean D(fake)
};

/// critic_loss = -(mean D(real) - mean D(fake)) + lambda * penalty,
/// gen_loss = -mean D(fake).
WganLosses wgan_losses(const CriticFn& critic, ad::Var x_real, ad::Var x_fake, double lambda,
                       const Eigen::VectorXd& eps, bool fd_penalty = false);

/// Numeric losses for concrete models (fresh graph, all parameters frozen).
struct WganLossValues {
  double critic_loss, gen_loss, penalty, wasserstein;
};
WganLossValues wgan_losses(const Tensor& x_real, const Tensor& z, const Generator& g, const Critic& d, double lambda,
                           Rng& rng);

struct GanTrainConfig {
  double lambda = 10.0;
  int n_critic = 5;
  AdamConfig adam{1e-3, 0.5, 0.99, 1e-8};
  int epochs = 200;
  int batch = 64;
  /// Stop when the moving average of the Wasserstein estimate has not
  /// improved for `patience` epochs; 0 disables.
  int patience = 50;
  int ma_window = 10;
  bool fd_penalty_debug = false;
  /// When set, the per-epoch history is written here (also on divergence).
  std::filesystem::path history_path;
  /// Progress line every n epochs on stderr; 0 for silence.
  int log_every = 0;

  void validate() const;
};

struct GanEpoch {
  int epoch;
  double critic_loss;
  double gen_loss;
  double wasserstein;
  double penalty;
};

struct GanTrainResult {
  std::vector<GanEpoch> history;
  int epochs_run = 0;
  bool stopped_early = false;
};

/// Trains in place. `data` rows are samples already rescaled to [-1, 1].
/// The data are put in a canonical row order first, so the result depends on
/// the seed but not on the order of the rows handed in.
GanTrainResult train_wgan(const Tensor& data, Generator& generator, Critic& critic, const GanTrainConfig& cfg,
                          std::uint64_t seed);

void write_gan_history(const std::filesystem::path& path, const std::vector<GanEpoch>& history);

}  // namespace ganflow::gan
