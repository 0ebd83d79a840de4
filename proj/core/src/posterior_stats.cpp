#include "ganflow/posterior_stats.hpp"

#include <cmath>
#include <fstream>

#include "ganflow/errors.hpp"
#include "ganflow/parallel.hpp"
#include "ganflow/rng.hpp"
#include "ganflow/tensor_io.hpp"

namespace ganflow::stats {

namespace {

constexpr std::size_t kChunk = 1024;

}  // namespace

PosteriorEnsemble summarize(Tensor samples) {
  if (samples.rows() < 2) throw ValidationError("posterior ensemble needs n_s >= 2");
  PosteriorEnsemble e;
  e.n_s = static_cast<std::size_t>(samples.rows());
  e.mean_field = samples.colwise().mean().transpose();
  const double n = static_cast<double>(samples.rows());
  e.std_field = ((samples.rowwise() - e.mean_field.transpose()).colwise().squaredNorm() / (n - 1.0))
                    .transpose()
                    .cwiseSqrt();
  e.samples = std::move(samples);
  return e;
}

PosteriorEnsemble sample_posterior(const gan::Generator& generator, const flows::FlowModel& flow, std::size_t n_s,
                                   std::uint64_t seed, unsigned workers) {
  if (n_s < 2) throw ValidationError("posterior ensemble needs n_s >= 2");
  if (flow.n_z() != generator.n_z()) throw ShapeError("flow and generator latent dimensions differ");
  const Eigen::Index n_z = generator.n_z();
  Tensor z(static_cast<Eigen::Index>(n_s), n_z);
  for (std::size_t i = 0; i < n_s; ++i) {
    Rng rng = make_rng(seed, i);
    z.row(static_cast<Eigen::Index>(i)) = standard_normal(rng, 1, n_z);
  }
  Tensor x(static_cast<Eigen::Index>(n_s), generator.n_x());
  const std::size_t n_chunks = (n_s + kChunk - 1) / kChunk;
  parallel_for(
      n_chunks,
      [&](std::size_t c) {
        const auto r0 = static_cast<Eigen::Index>(c * kChunk);
        const Eigen::Index m = std::min<Eigen::Index>(static_cast<Eigen::Index>(kChunk), z.rows() - r0);
        x.middleRows(r0, m) = generator.forward_data(flow.forward(Tensor(z.middleRows(r0, m))).y);
      },
      workers);
  return summarize(std::move(x));
}

double rmse(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("rmse: shape mismatch");
  if (a.size() == 0) throw ValidationError("rmse: empty fields");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

double ssim(const Tensor& a, const Tensor& b, double dynamic_range, const SsimConfig& cfg) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("ssim: shape mismatch");
  if (!(dynamic_range > 0)) throw ValidationError("ssim: dynamic_range must be positive");
  const int w = cfg.window;
  if (a.rows() < w || a.cols() < w)
    throw ValidationError("ssim: image " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                          " is smaller than the " + std::to_string(w) + "x" + std::to_string(w) + " window");
  Eigen::VectorXd g(w);
  for (int i = 0; i < w; ++i) {
    const double d = i - (w - 1) / 2.0;
    g(i) = std::exp(-d * d / (2 * cfg.sigma * cfg.sigma));
  }
  g /= g.sum();
  const Tensor kern = g * g.transpose();
  const double c1 = std::pow(cfg.k1 * dynamic_range, 2);
  const double c2 = std::pow(cfg.k2 * dynamic_range, 2);
  const Eigen::Index nr = a.rows() - w + 1, nc = a.cols() - w + 1;
  double total = 0;
  for (Eigen::Index i = 0; i < nr; ++i) {
    for (Eigen::Index j = 0; j < nc; ++j) {
      const auto pa = a.block(i, j, w, w).array();
      const auto pb = b.block(i, j, w, w).array();
      const auto k = kern.array();
      const double ma = (k * pa).sum();
      const double mb = (k * pb).sum();
      const double vaa = (k * pa * pa).sum() - ma * ma;
      const double vbb = (k * pb * pb).sum() - mb * mb;
      const double vab = (k * pa * pb).sum() - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * vab + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
    }
  }
  return total / static_cast<double>(nr * nc);
}

double default_dynamic_range(const std::string& problem_kind) { return problem_kind == "heat" ? 4.0 : 1.0; }

MetricReport compare(const Tensor& a, const Tensor& b, double dynamic_range) {
  MetricReport r;
  r.rmse = rmse(a, b);
  r.ssim = ssim(a, b, dynamic_range);
  r.abs_error = (a - b).cwiseAbs();
  return r;
}

void write_metric_csv(const std::filesystem::path& path, const MetricReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  out << "rmse,ssim,n_s,seed\n" << r.rmse << ',' << r.ssim << ',' << r.n_s << ',' << r.seed << '\n';
}

std::optional<MetricReport> write_ensemble(const std::filesystem::path& dir, const PosteriorEnsemble& e,
                                           Eigen::Index n_p, const std::optional<Tensor>& truth,
                                           double dynamic_range, std::uint64_t seed, bool pgm) {
  if (n_p * n_p != e.mean_field.size()) throw ShapeError("ensemble fields are not n_p x n_p images");
  std::filesystem::create_directories(dir);
  const Tensor mean = as_image(e.mean_field.transpose(), n_p);
  const Tensor sd = as_image(e.std_field.transpose(), n_p);
  write_gftensor(dir / "mean.gft", mean);
  write_gftensor(dir / "std.gft", sd);
  if (pgm) {
    write_pgm(dir / "mean.pgm", mean);
    write_pgm(dir / "std.pgm", sd);
  }
  if (!truth) return std::nullopt;
  MetricReport r = compare(mean, *truth, dynamic_range);
  r.n_s = e.n_s;
  r.seed = seed;
  write_gftensor(dir / "abs_error.gft", r.abs_error);
  if (pgm) write_pgm(dir / "abs_error.pgm", r.abs_error);
  write_metric_csv(dir / "metrics.csv", r);
  return r;
}

}  // namespace ganflow::stats
