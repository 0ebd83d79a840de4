#pragma once

// Posterior ensembles x = unrescale(G(H(z))) and reconstruction metrics.

#include <cstdint>
#include <filesystem>
#include <optional>

#include <Eigen/Dense>

#include "ganflow/flows.hpp"
#include "ganflow/gan_prior.hpp"

namespace ganflow::stats {

using Tensor = Eigen::MatrixXd;

struct PosteriorEnsemble {
  Tensor samples;              // n_s x n_x
  Eigen::VectorXd mean_field;  // n_x
  Eigen::VectorXd std_field;   // n_x, divisor n_s - 1
  std::size_t n_s = 0;
};

/// Mean and std of the rows; needs at least two.
PosteriorEnsemble summarize(Tensor samples);

/// z_i ~ N(0, I) from the stream (seed, i), pushed through the flow and the
/// generator. Touches no forward model.
PosteriorEnsemble sample_posterior(const gan::Generator& generator, const flows::FlowModel& flow, std::size_t n_s,
                                   std::uint64_t seed, unsigned workers = 0);

double rmse(const Tensor& a, const Tensor& b);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over every full window position (no padding).
double ssim(const Tensor& a, const Tensor& b, double dynamic_range, const SsimConfig& cfg = {});

/// Data bound used as the SSIM dynamic range: 4 for heat, 1 otherwise.
double default_dynamic_range(const std::string& problem_kind);

struct MetricReport {
  double rmse = 0;
  double ssim = 0;
  Tensor abs_error;  // per pixel, image-shaped
  std::size_t n_s = 0;
  std::uint64_t seed = 0;
};

/// a and b are images of equal shape.
MetricReport compare(const Tensor& a, const Tensor& b, double dynamic_range);

/// "rmse,ssim,n_s,seed" header plus one row.
void write_metric_csv(const std::filesystem::path& path, const MetricReport& r);

/// mean.gft, std.gft and PGM previews under `dir`; with a truth image also
/// abs_error.gft/.pgm and metrics.csv. Returns the report when truth is given.
std::optional<MetricReport> write_ensemble(const std::filesystem::path& dir, const PosteriorEnsemble& e,
                                           Eigen::Index n_p, const std::optional<Tensor>& truth,
                                           double dynamic_range, std::uint64_t seed, bool pgm = true);

}  // namespace ganflow::stats
