#pragma once

// Synthetic prior datasets (rectangular inclusions, perturbed Shepp-Logan
// phantoms) and the [lo, hi] <-> [-1, 1] rescaling between data space and
// generator output space.

#include <array>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "ganflow/autodiff.hpp"
#include "ganflow/config.hpp"
#include "ganflow/rng.hpp"

namespace ganflow::prior {

using Tensor = Eigen::MatrixXd;

// ---- rescaling ------------------------------------------------------------------

struct Rescaler {
  double lo = 0.0;
  double hi = 1.0;

  Rescaler() = default;
  Rescaler(double lo_, double hi_);

  [[nodiscard]] double rescale(double x) const { return 2.0 * (x - lo) / (hi - lo) - 1.0; }
  [[nodiscard]] double unrescale(double t) const { return lo + 0.5 * (t + 1.0) * (hi - lo); }
  [[nodiscard]] Tensor rescale(const Tensor& x) const;
  [[nodiscard]] Tensor unrescale(const Tensor& t) const;
  [[nodiscard]] ad::Var unrescale(ad::Var t) const;
};

/// heat: [0, 4]; radon and phase: [0, 1].
Rescaler rescaler_for(const std::string& problem_kind);

// ---- rectangular inclusions -------------------------------------------------------

struct RectPriorConfig {
  Eigen::Index n_p = 16;
  double length = 2.0 * std::numbers::pi;
  double corner_lo = 0.2;  // top-left corner in [corner_lo, corner_hi] * L, both axes
  double corner_hi = 0.4;
  double far_lo = 0.6;  // bottom-right corner in [far_lo, far_hi] * L
  double far_hi = 0.8;
  double left_value = 2.0;
  double right_value = 4.0;

  /// Nodes sit at (k + 1) * L / (n_p + 1), the interior nodes of the heat grid.
  [[nodiscard]] double spacing() const { return length / static_cast<double>(n_p + 1); }
};

/// Corner coordinates in domain units; x runs along columns, y down the rows.
struct RectParams {
  double x0 = 0, y0 = 0;  // top-left
  double x1 = 0, y1 = 0;  // bottom-right
};

/// Inclusive pixel bounds after snapping corners to the nearest node.
struct RectCells {
  Eigen::Index row0, col0, row1, col1;
  bool operator==(const RectCells&) const = default;
};

RectParams draw_rect_params(const RectPriorConfig& cfg, Rng& rng);
RectCells snap_rect(const RectPriorConfig& cfg, const RectParams& p);
/// n_p x n_p field: 0 outside, affine in the column index from left_value to right_value inside.
Tensor rect_field(const RectPriorConfig& cfg, const RectCells& cells);
Tensor rect_field(const RectPriorConfig& cfg, const RectParams& p);
Tensor gen_rect_field(const RectPriorConfig& cfg, Rng& rng);

// ---- Shepp-Logan phantoms ---------------------------------------------------------

struct Ellipse {
  double r, s;      // centre, horizontal and vertical, in [-1, 1]^2
  double a, b;      // semi-axes along the rotated r and s directions
  double alpha;     // inclination in degrees
  double rho;       // additive density
};

using EllipseTable = std::array<Ellipse, 10>;

EllipseTable shepp_logan_base();

struct PhantomConfig {
  Eigen::Index n_p = 32;
  /// Half-widths of the uniform perturbations of (r, s, a, b, alpha, rho).
  std::array<double, 6> scales{0.005, 0.005, 0.005, 0.005, 2.5, 0.0005};
  /// Integer shift range in pixels; negative selects round(8 * n_p / 128).
  int max_shift = -1;
  double max_rotation = 20.0;  // degrees

  [[nodiscard]] int shift_range() const;
};

struct PhantomParams {
  EllipseTable ellipses;
  int shift_h = 0;  // pixels to the right
  int shift_v = 0;  // pixels down
  double beta = 0.0;  // counter-clockwise rotation, degrees
};

PhantomParams draw_phantom_params(const PhantomConfig& cfg, Rng& rng);
PhantomParams nominal_phantom_params();

/// Unclamped sum of ellipse densities at (r, s).
double phantom_density(const EllipseTable& ellipses, double r, double s);
/// Pixel-centre membership on the n x n grid over [-1, 1]^2, clamped to [0, 1].
Tensor rasterize_phantom(const EllipseTable& ellipses, Eigen::Index n);
/// Integer shift, then rotation about the image centre with bilinear
/// resampling (zero outside), then clamp to [0, 1].
Tensor shift_rotate(const Tensor& image, int shift_h, int shift_v, double beta_deg);
Tensor phantom_image(const PhantomConfig& cfg, const PhantomParams& p);
Tensor gen_phantom(const PhantomConfig& cfg, Rng& rng);

// ---- datasets ---------------------------------------------------------------------

struct DatasetSpec {
  std::string kind = "rect";  // rect | phantom
  Eigen::Index n_p = 16;
  std::size_t count = 2000;
  std::uint64_t seed = 0;
  RectPriorConfig rect;
  PhantomConfig phantom;

  void validate() const;
  void to_toml(toml::Table& t) const;
  static DatasetSpec from_toml(const toml::Table& t);
};

/// Sample `index` uses its own stream derived from (seed, index).
Tensor generate_sample(const DatasetSpec& spec, std::size_t index);
/// count x n_p^2 matrix, one flattened field per row.
Tensor generate_dataset(const DatasetSpec& spec, unsigned workers = 0);

/// Writes sample_<index>.gft files and manifest.toml.
void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const Tensor& samples);

struct Dataset {
  DatasetSpec spec;
  Tensor samples;
};
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace ganflow::prior
