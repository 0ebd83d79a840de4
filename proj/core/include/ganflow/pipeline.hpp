#pragma once

// Experiment configuration and the three-phase run: GAN prior (A), latent
// flow VI (B), posterior sampling and metrics (C), plus optional baselines.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ganflow/config.hpp"
#include "ganflow/gan_prior.hpp"
#include "ganflow/posterior_stats.hpp"
#include "ganflow/prior_data.hpp"
#include "ganflow/samplers.hpp"
#include "ganflow/variational.hpp"

namespace ganflow::pipeline {

using Tensor = Eigen::MatrixXd;

/// Every random stream of a run is derive_seed(seed, tag).
enum SeedTag : std::uint64_t {
  kDataset = 1,
  kGeneratorInit,
  kCriticInit,
  kGan,
  kTruth,
  kNoise,
  kMask,
  kFlow,
  kVi,
  kPosterior,
  kPriorBaseline,
  kElbo,
  kHmc,
  kOracle,
  kConjugate,
};

struct ProblemSettings {
  /// heat | radon | phase | conjugate
  std::string kind = "heat";
  Eigen::Index n_p = 16;
  double sigma2 = 1.0;
  /// phase: noise sd = noise_fraction * |zero-frequency amplitude of the
  /// truth|; when positive it replaces sigma2.
  double noise_fraction = 0.0;
  double kappa = 0.64, dt = 0.01, final_time = 1.0;  // heat
  Eigen::Index n_angles = 32;                        // radon
  int mask_r = 4;                                    // phase
  double center_fraction = 0.08;
  Eigen::Index n_x = 64, n_y = 32;  // conjugate
  /// GFTENSOR ground truth; empty draws one from the prior.
  std::string truth;
};

struct GanSettings {
  /// Existing generator file: Phase A is skipped.
  std::string generator;
  Eigen::Index n_z = 5;
  std::vector<Eigen::Index> hidden{64, 256};
  std::vector<Eigen::Index> critic_hidden{256, 64};
  gan::GanTrainConfig train;
};

struct HmcSettings {
  bool enabled = false;
  samplers::HmcConfig cfg;
};

struct OracleSettings {
  bool enabled = false;
  std::size_t n = 1000000;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ProblemSettings problem;
  prior::DatasetSpec prior;
  GanSettings gan;
  std::string flow = "planar:64";
  vi::VIConfig vi;
  HmcSettings hmc;
  OracleSettings oracle;
  std::size_t n_posterior = 15000;
  std::size_t elbo_samples = 2000;
  std::filesystem::path out_dir = "out";
  bool pgm = true;
  bool save_dataset = false;
  /// Progress lines on stderr every n epochs; 0 for silence.
  int log_every = 0;

  /// Per-problem defaults.
  static ExperimentConfig defaults(const std::string& kind);
  /// Defaults for [problem] kind overlaid with the document; unknown keys are errors.
  static ExperimentConfig from_toml(const toml::Document& doc);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Fully resolved document: every setting spelled out.
  [[nodiscard]] toml::Document to_toml() const;
  void validate() const;
};

struct PipelineResult {
  std::filesystem::path dir;
  /// summary.csv columns, in order.
  std::vector<std::pair<std::string, double>> metrics;
  stats::PosteriorEnsemble posterior;
  std::optional<stats::PosteriorEnsemble> hmc;
  std::optional<samplers::ImportanceResult> oracle;
  Tensor truth;  // 1 x n_x; for the conjugate case, A mu_post + b
  vi::VIResult vi;
  std::uint64_t phase_b_solves = 0;
  std::uint64_t phase_c_solves = 0;
  bool generator_reused = false;

  [[nodiscard]] double metric(const std::string& name) const;
};

/// Everything downstream of the prior: forward model, truth and measurement,
/// drawn exactly as run_pipeline draws them.
struct Instance {
  /// Conjugate: the affine oracle generator. Otherwise the generator file
  /// named in the config, or null.
  std::shared_ptr<const gan::Generator> generator;
  std::shared_ptr<fwd::ForwardModel> model;
  fwd::ForwardProblem problem;
  /// n_p x n_p image; conjugate: 1 x n_x posterior mean A mu_post + b.
  Tensor truth;
  std::optional<samplers::ConjugateCase> conjugate;
};

Instance make_instance(const ExperimentConfig& cfg);

/// Phase A: synthesizes the dataset (unless `data`, n x n_p^2 in data
/// space, is given), trains the WGAN-GP and writes generator.gfp and
/// gan_history.csv under `dir`.
gan::Generator train_generator(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                               const Tensor* data = nullptr);

/// Importance-sampling reference posterior from the configured prior
/// (rectangles, phantoms, or z ~ N(0, I) through the affine generator).
samplers::ImportanceResult run_oracle(const ExperimentConfig& cfg, const Instance& inst, std::size_t n);

/// Runs every phase and writes the artifact directory. Errors propagate
/// after the artifacts written so far are kept.
PipelineResult run_pipeline(const ExperimentConfig& cfg);

/// One pipeline per latent dimension under out_dir/nz_<k>, and
/// out_dir/sweep.csv with one row per n_z.
std::vector<PipelineResult> run_sweep(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& n_z_values);

/// The measurement model of a problem (no truth, no noise).
std::shared_ptr<fwd::ForwardModel> make_forward(const ProblemSettings& p, std::uint64_t seed);

}  // namespace ganflow::pipeline
