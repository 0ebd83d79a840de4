#include "ganflow/forward_models.hpp"

#include <algorithm>
#include <cmath>

#include "ganflow/errors.hpp"

namespace ganflow::fwd {

// ---- ForwardModel ----------------------------------------------------------

void ForwardModel::check_input(Eigen::Index rows, Eigen::Index cols) const {
  if (cols != input_dim())
    throw ShapeError(kind() + " forward: expected " + std::to_string(input_dim()) + " columns, got " +
                     std::to_string(cols));
  (void)rows;
}

Tensor ForwardModel::apply(const Tensor& x) const {
  check_input(x.rows(), x.cols());
  if (!x.allFinite()) throw NumericalError(kind() + " forward: non-finite input field");
  solves_.fetch_add(static_cast<std::uint64_t>(x.rows()));
  return do_apply(x);
}

ad::Var ForwardModel::apply(ad::Var x) const {
  check_input(x.rows(), x.cols());
  solves_.fetch_add(static_cast<std::uint64_t>(x.rows()));
  return do_apply(x);
}

LinearForward::LinearForward(std::string kind, Tensor matrix)
    : kind_(std::move(kind)), matrix_(std::move(matrix)), matrix_t_(matrix_.transpose()) {
  if (matrix_.size() == 0) throw ValidationError("linear forward: operator not assembled");
}

Tensor LinearForward::do_apply(const Tensor& x) const { return x * matrix_t_; }

ad::Var LinearForward::do_apply(ad::Var x) const {
  return ad::matmul(x, x.graph->constant(matrix_t_));
}

// ---- heat ----------------------------------------------------------------------

int HeatConfig::steps() const {
  if (!(dt > 0) || !(final_time > 0)) throw ValidationError("heat: dt and final time must be positive");
  return static_cast<int>(std::lround(final_time / dt));
}

Tensor heat_operator(const HeatConfig& cfg) {
  if (cfg.n_p < 2) throw ValidationError("heat: grid needs n_p >= 2");
  if (!(cfg.kappa > 0)) throw ValidationError("heat: kappa must be positive");
  const Eigen::Index n = cfg.n_p;
  const double h = cfg.spacing();
  const int steps = cfg.steps();
  const double pi = std::numbers::pi;

  // 1-D Dirichlet second-difference eigenpairs.
  Tensor basis(n, n);
  Eigen::VectorXd mu(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double s = std::sin(static_cast<double>(j + 1) * pi / (2.0 * static_cast<double>(n + 1)));
    mu(j) = 4.0 / (h * h) * s * s;
    for (Eigen::Index i = 0; i < n; ++i)
      basis(i, j) = std::sqrt(2.0 / static_cast<double>(n + 1)) *
                    std::sin(static_cast<double>((i + 1) * (j + 1)) * pi / static_cast<double>(n + 1));
  }

  const Eigen::Index nx = n * n;
  Tensor w(nx, nx);
  Eigen::VectorXd damp(nx);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const Eigen::Index col = a * n + b;
      const double lambda = cfg.kappa * (mu(a) + mu(b));
      damp(col) = std::pow(1.0 + cfg.dt * lambda, -static_cast<double>(steps));
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) w(i * n + j, col) = basis(i, a) * basis(j, b);
    }
  }
  return w * damp.asDiagonal() * w.transpose();
}

std::shared_ptr<LinearForward> make_heat(const HeatConfig& cfg) {
  return std::make_shared<LinearForward>("heat", heat_operator(cfg));
}

// ---- radon ----------------------------------------------------------------------

Eigen::Index RadonConfig::detectors() const {
  if (n_det > 0) return n_det;
  return static_cast<Eigen::Index>(std::ceil(static_cast<double>(n_p) * std::numbers::sqrt2));
}

double RadonConfig::detector_spacing() const {
  return static_cast<double>(n_p) * std::numbers::sqrt2 / static_cast<double>(detectors());
}

double RadonConfig::angle(Eigen::Index j) const {
  return std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_angles);
}

double RadonConfig::offset(Eigen::Index i) const {
  return (static_cast<double>(i) - 0.5 * static_cast<double>(detectors() - 1)) * detector_spacing();
}

Eigen::Vector2d radon_pixel_center(Eigen::Index n_p, Eigen::Index i, Eigen::Index j) {
  const double half = 0.5 * static_cast<double>(n_p - 1);
  return {static_cast<double>(j) - half, half - static_cast<double>(i)};
}

namespace {

double hat(double v) { return std::max(0.0, 1.0 - std::abs(v)); }

/// Integral over s of hat(alpha + s*dx) * hat(beta + s*dy). The integrand is
/// quadratic between breakpoints, so Simpson's rule per piece is exact.
double hat_product_integral(double alpha, double dx, double beta, double dy) {
  constexpr double kTiny = 1e-14;
  double lo = -1e300;
  double hi = 1e300;
  double constant = 1.0;
  double breaks[8];
  int nb = 0;
  auto clip = [&](double a, double d) {
    if (std::abs(d) < kTiny) {
      constant *= hat(a);
      return;
    }
    const double s1 = (-1.0 - a) / d;
    const double s2 = (1.0 - a) / d;
    lo = std::max(lo, std::min(s1, s2));
    hi = std::min(hi, std::max(s1, s2));
    breaks[nb++] = -a / d;
  };
  clip(alpha, dx);
  clip(beta, dy);
  if (constant == 0.0 || !(hi > lo)) return 0.0;
  double pts[4];
  int np = 0;
  pts[np++] = lo;
  for (int k = 0; k < nb; ++k)
    if (breaks[k] > lo && breaks[k] < hi) pts[np++] = breaks[k];
  pts[np++] = hi;
  std::sort(pts, pts + np);
  auto f = [&](double s) {
    const double fx = std::abs(dx) < kTiny ? 1.0 : hat(alpha + s * dx);
    const double fy = std::abs(dy) < kTiny ? 1.0 : hat(beta + s * dy);
    return fx * fy;
  };
  double total = 0.0;
  for (int k = 0; k + 1 < np; ++k) {
    const double a = pts[k];
    const double b = pts[k + 1];
    total += (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
  }
  return constant * total;
}

}  // namespace

Tensor radon_matrix(const RadonConfig& cfg) {
  if (cfg.n_p < 2 || cfg.n_angles < 1) throw ValidationError("radon: need n_p >= 2 and at least one angle");
  const Eigen::Index nd = cfg.detectors();
  const Eigen::Index na = cfg.n_angles;
  const Eigen::Index n = cfg.n_p;
  Tensor m = Tensor::Zero(nd * na, n * n);
  for (Eigen::Index ia = 0; ia < na; ++ia) {
    const double phi = cfg.angle(ia);
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    for (Eigen::Index id = 0; id < nd; ++id) {
      const double t = cfg.offset(id);
      const Eigen::Index row = id * na + ia;
      // Ray: (x, y) = t (c, s) + u (-s, c).
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          const Eigen::Vector2d ctr = radon_pixel_center(n, i, j);
          // Distance of the pixel centre from the ray must be < sqrt 2.
          const double dist = std::abs(ctr.x() * c + ctr.y() * s - t);
          if (dist >= std::numbers::sqrt2) continue;
          m(row, i * n + j) = hat_product_integral(t * c - ctr.x(), -s, t * s - ctr.y(), c);
        }
      }
    }
  }
  return m;
}

std::shared_ptr<LinearForward> make_radon(const RadonConfig& cfg) {
  return std::make_shared<LinearForward>("radon", radon_matrix(cfg));
}

// ---- phase ----------------------------------------------------------------------

double default_center_fraction(int r) {
  if (r == 4) return 0.08;
  if (r == 8) return 0.04;
  throw ValidationError("acceleration factor must be 4 or 8");
}

Eigen::MatrixXi build_mask(Eigen::Index n_p, int r, double center_fraction, std::uint64_t seed) {
  if (r != 4 && r != 8) throw ValidationError("acceleration factor must be 4 or 8");
  if (n_p < 1) throw ValidationError("mask size must be positive");
  if (!(center_fraction >= 0.0) || center_fraction >= 1.0)
    throw ValidationError("center fraction must lie in [0, 1)");
  const auto cols = static_cast<double>(n_p);
  const auto low = static_cast<Eigen::Index>(std::floor(center_fraction * cols));
  const double target = cols / static_cast<double>(r);
  if (static_cast<double>(low) > target)
    throw ValidationError("infeasible mask: central band alone exceeds 1/r of the columns");
  const double prob = low == n_p ? 0.0 : (target - static_cast<double>(low)) / (cols - static_cast<double>(low));
  const Eigen::Index pad = (n_p - low + 1) / 2;

  Rng rng = make_rng(seed, 0x6d61736bULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXi mask = Eigen::MatrixXi::Zero(n_p, n_p);
  for (Eigen::Index j = 0; j < n_p; ++j) {
    const bool central = j >= pad && j < pad + low;
    const double draw = u(rng);  // drawn for every column so the stream is layout independent
    if (central || draw < prob) mask.col(j).setOnes();
  }
  return mask;
}

std::pair<Tensor, Tensor> dft2(const Tensor& image) {
  if (image.rows() != image.cols()) throw ShapeError("dft2: image must be square");
  const Eigen::Index n = image.rows();
  Tensor c(n, n);
  Tensor s(n, n);
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index m = 0; m < n; ++m) {
      const double ang = 2.0 * std::numbers::pi * static_cast<double>((k * m) % n) / static_cast<double>(n);
      c(k, m) = std::cos(ang);
      s(k, m) = -std::sin(ang);
    }
  // X = W x W with W = c + i s (symmetric).
  const Tensor re1 = c * image;
  const Tensor im1 = s * image;
  Tensor re = re1 * c - im1 * s;
  Tensor im = re1 * s + im1 * c;
  return {std::move(re), std::move(im)};
}

PhaseForward::PhaseForward(Eigen::Index n_p, Eigen::MatrixXi mask) : n_p_(n_p), mask_(std::move(mask)) {
  if (mask_.rows() != n_p || mask_.cols() != n_p) throw ShapeError("phase: mask does not match image size");
  const Eigen::Index half = n_p / 2;
  for (Eigen::Index u = 0; u < n_p; ++u)
    for (Eigen::Index v = 0; v < n_p; ++v) {
      const int m = mask_(u, v);
      if (m != 0 && m != 1) throw ValidationError("phase: mask entries must be 0 or 1");
      if (m == 1) kept_.emplace_back((u - half + n_p) % n_p, (v - half + n_p) % n_p);
    }
  if (kept_.empty()) throw ValidationError("phase: mask keeps no measurements");
  const Eigen::Index nx = n_p * n_p;
  const auto ny = static_cast<Eigen::Index>(kept_.size());
  cos_t_.resize(nx, ny);
  sin_t_.resize(nx, ny);
  for (Eigen::Index q = 0; q < ny; ++q) {
    const auto [k, l] = kept_[static_cast<std::size_t>(q)];
    for (Eigen::Index m = 0; m < n_p; ++m)
      for (Eigen::Index p = 0; p < n_p; ++p) {
        const Eigen::Index phase = (k * m + l * p) % n_p;
        const double ang = 2.0 * std::numbers::pi * static_cast<double>(phase) / static_cast<double>(n_p);
        cos_t_(m * n_p + p, q) = std::cos(ang);
        sin_t_(m * n_p + p, q) = -std::sin(ang);
      }
  }
}

Tensor PhaseForward::do_apply(const Tensor& x) const {
  const Tensor re = x * cos_t_;
  const Tensor im = x * sin_t_;
  return (re.array().square() + im.array().square()).sqrt().matrix();
}

ad::Var PhaseForward::do_apply(ad::Var x) const {
  auto& g = *x.graph;
  return ad::magnitude(ad::matmul(x, g.constant(cos_t_)), ad::matmul(x, g.constant(sin_t_)));
}

// ---- likelihood ---------------------------------------------------------------

void NoiseModel::validate() const {
  if (!(sigma2 > 0) || !std::isfinite(sigma2)) throw ValidationError("noise variance must be positive and finite");
}

void ForwardProblem::validate() const {
  if (!model) throw ValidationError("forward problem has no model");
  noise.validate();
  if (y_hat.rows() != 1 || y_hat.cols() != model->output_dim())
    throw ShapeError("measurement must be 1 x " + std::to_string(model->output_dim()));
}

Eigen::VectorXd log_likelihood(const ForwardProblem& problem, const Tensor& x) {
  problem.validate();
  const Tensor y = problem.model->apply(x);
  const double ny = static_cast<double>(y.cols());
  const double norm = -0.5 * ny * std::log(2.0 * std::numbers::pi * problem.noise.sigma2);
  Eigen::VectorXd out(y.rows());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    out(i) = -(problem.y_hat.row(0) - y.row(i)).squaredNorm() / (2.0 * problem.noise.sigma2) + norm;
  return out;
}

ad::Var log_likelihood(const ForwardProblem& problem, ad::Var x) {
  problem.validate();
  auto& g = *x.graph;
  const ad::Var y = problem.model->apply(x);
  const ad::Var target = ad::broadcast(g.constant(problem.y_hat), y.rows(), y.cols());
  const double ny = static_cast<double>(y.cols());
  const double norm = -0.5 * ny * std::log(2.0 * std::numbers::pi * problem.noise.sigma2);
  return (-1.0 / (2.0 * problem.noise.sigma2)) * ad::sum_cols(ad::square(target - y)) + norm;
}

Tensor simulate_measurement(const ForwardModel& model, const Tensor& x_true, double sigma2, Rng& rng) {
  NoiseModel{sigma2}.validate();
  Tensor y = model.apply(x_true);
  const double sd = std::sqrt(sigma2);
  y += sd * standard_normal(rng, y.rows(), y.cols());
  return y;
}

}  // namespace ganflow::fwd
