#pragma once

// Physics forward operators F and the Gaussian likelihood.
//
// All operators act on batches: each row of the input is one flattened
// n_p x n_p field (row-major), each row of the output one measurement vector.

#include <atomic>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ganflow/autodiff.hpp"
#include "ganflow/rng.hpp"

namespace ganflow::fwd {

using Tensor = Eigen::MatrixXd;

class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  [[nodiscard]] virtual std::string kind() const = 0;
  [[nodiscard]] virtual Eigen::Index input_dim() const = 0;
  [[nodiscard]] virtual Eigen::Index output_dim() const = 0;

  /// Each row counts as one forward solve.
  [[nodiscard]] Tensor apply(const Tensor& x) const;
  [[nodiscard]] ad::Var apply(ad::Var x) const;

  [[nodiscard]] std::uint64_t solve_count() const { return solves_.load(); }
  void reset_solve_count() { solves_.store(0); }
  /// For callers that replay a recorded graph containing apply(Var).
  void record_solves(std::uint64_t n) const { solves_.fetch_add(n); }

 protected:
  [[nodiscard]] virtual Tensor do_apply(const Tensor& x) const = 0;
  [[nodiscard]] virtual ad::Var do_apply(ad::Var x) const = 0;

 private:
  void check_input(Eigen::Index rows, Eigen::Index cols) const;
  mutable std::atomic<std::uint64_t> solves_{0};
};

/// y = A x for a dense matrix A (n_y x n_x).
class LinearForward : public ForwardModel {
 public:
  LinearForward(std::string kind, Tensor matrix);

  [[nodiscard]] std::string kind() const override { return kind_; }
  [[nodiscard]] Eigen::Index input_dim() const override { return matrix_.cols(); }
  [[nodiscard]] Eigen::Index output_dim() const override { return matrix_.rows(); }
  [[nodiscard]] const Tensor& matrix() const { return matrix_; }

 protected:
  [[nodiscard]] Tensor do_apply(const Tensor& x) const override;
  [[nodiscard]] ad::Var do_apply(ad::Var x) const override;

 private:
  std::string kind_;
  Tensor matrix_;
  Tensor matrix_t_;
};

// ---- heat conduction --------------------------------------------------------

struct HeatConfig {
  Eigen::Index n_p = 16;
  double length = 2.0 * std::numbers::pi;
  double kappa = 0.64;
  double dt = 0.01;
  double final_time = 1.0;

  /// Unknowns sit on the interior nodes of a uniform grid whose boundary
  /// nodes (held at 0) are eliminated: spacing L / (n_p + 1).
  [[nodiscard]] double spacing() const { return length / static_cast<double>(n_p + 1); }
  [[nodiscard]] int steps() const;
};

/// Dense A = (I + dt K)^-steps with K = -kappa * (5-point Laplacian), zero
/// Dirichlet boundary. Assembled from the closed-form sine eigenbasis of K.
Tensor heat_operator(const HeatConfig& cfg);
std::shared_ptr<LinearForward> make_heat(const HeatConfig& cfg);

// ---- parallel-beam Radon transform -----------------------------------------

struct RadonConfig {
  Eigen::Index n_p = 32;
  Eigen::Index n_angles = 32;
  /// 0 selects ceil(n_p * sqrt 2) so the detector row spans the image diagonal.
  Eigen::Index n_det = 0;

  [[nodiscard]] Eigen::Index detectors() const;
  [[nodiscard]] double detector_spacing() const;
  [[nodiscard]] double angle(Eigen::Index j) const;
  [[nodiscard]] double offset(Eigen::Index i) const;
};

/// Pixel (row i, col j) centre in the Radon frame: x to the right, y up,
/// origin at the image centre, unit pixel pitch.
Eigen::Vector2d radon_pixel_center(Eigen::Index n_p, Eigen::Index i, Eigen::Index j);

/// System matrix (n_det*n_angles x n_p^2). Row i*n_angles + j holds the exact
/// line integral, along offset t_i and angle phi_j, of the bilinearly
/// interpolated (zero padded) image basis function of each pixel.
Tensor radon_matrix(const RadonConfig& cfg);
std::shared_ptr<LinearForward> make_radon(const RadonConfig& cfg);

// ---- masked Fourier magnitude (phase retrieval) ----------------------------

/// Centered k-space mask (zero frequency at index n_p/2) made of full columns.
/// Always keeps floor(center_fraction * n_p) central columns; the rest are kept
/// independently with the probability that makes the expected kept fraction 1/r.
Eigen::MatrixXi build_mask(Eigen::Index n_p, int r, double center_fraction, std::uint64_t seed);
double default_center_fraction(int r);

/// Unnormalized 2-D DFT of an n x n image; returns (real, imag).
std::pair<Tensor, Tensor> dft2(const Tensor& image);

class PhaseForward : public ForwardModel {
 public:
  PhaseForward(Eigen::Index n_p, Eigen::MatrixXi mask);

  [[nodiscard]] std::string kind() const override { return "phase"; }
  [[nodiscard]] Eigen::Index input_dim() const override { return n_p_ * n_p_; }
  [[nodiscard]] Eigen::Index output_dim() const override { return static_cast<Eigen::Index>(kept_.size()); }
  [[nodiscard]] const Eigen::MatrixXi& mask() const { return mask_; }
  /// Unshifted (k, l) frequency index of each measurement, in output order.
  [[nodiscard]] const std::vector<std::pair<Eigen::Index, Eigen::Index>>& kept() const { return kept_; }

 protected:
  [[nodiscard]] Tensor do_apply(const Tensor& x) const override;
  [[nodiscard]] ad::Var do_apply(ad::Var x) const override;

 private:
  Eigen::Index n_p_;
  Eigen::MatrixXi mask_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> kept_;
  Tensor cos_t_;  // n_x x n_y
  Tensor sin_t_;
};

// ---- likelihood ---------------------------------------------------------------

struct NoiseModel {
  double sigma2 = 1.0;
  void validate() const;
};

/// A forward model, its noise model and the observed measurement (1 x n_y).
struct ForwardProblem {
  std::shared_ptr<const ForwardModel> model;
  NoiseModel noise;
  Tensor y_hat;

  void validate() const;
};

/// -||y_hat - F(x)||^2 / (2 sigma2) - (n_y / 2) log(2 pi sigma2), one value per row of x.
Eigen::VectorXd log_likelihood(const ForwardProblem& problem, const Tensor& x);
/// Graph version: x is n x n_x, result n x 1.
ad::Var log_likelihood(const ForwardProblem& problem, ad::Var x);

/// F(x) plus N(0, sigma2) noise on every entry.
Tensor simulate_measurement(const ForwardModel& model, const Tensor& x_true, double sigma2, Rng& rng);

}  // namespace ganflow::fwd
