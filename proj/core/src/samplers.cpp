#include "ganflow/samplers.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "ganflow/errors.hpp"
#include "ganflow/parallel.hpp"
#include "ganflow/tensor_io.hpp"
#include "ganflow/variational.hpp"

namespace ganflow::samplers {

namespace {

constexpr std::size_t kChunk = 4096;
constexpr double kMinEss = 50.0;

}  // namespace

// ---- HMC ----------------------------------------------------------------------------

void HmcConfig::validate() const {
  if (n_leapfrog < 1) throw ValidationError("hmc: n_leapfrog must be >= 1");
  if (!(target_accept > 0 && target_accept < 1)) throw ValidationError("hmc: target_accept must be in (0, 1)");
  if (!(burn_in_fraction >= 0 && burn_in_fraction < 1)) throw ValidationError("hmc: burn_in_fraction must be in [0, 1)");
  if (!(initial_step > 0)) throw ValidationError("hmc: initial_step must be positive");
  if (!(step_jitter >= 0 && step_jitter < 1)) throw ValidationError("hmc: step_jitter must be in [0, 1)");
  if (n_samples < 1) throw ValidationError("hmc: n_samples must be >= 1");
  if (thin < 1) throw ValidationError("hmc: thin must be >= 1");
}

void leapfrog(const LogDensityFn& f, Eigen::VectorXd& z, Eigen::VectorXd& p, double eps, int steps, double& logp,
              Eigen::VectorXd& grad) {
  p += 0.5 * eps * grad;
  for (int s = 0; s < steps; ++s) {
    z += eps * p;
    logp = f(z, grad);
    if (!std::isfinite(logp) || !grad.allFinite()) throw NumericalError("leapfrog: non-finite log density");
    p += (s + 1 == steps ? 0.5 : 1.0) * eps * grad;
  }
}

HmcResult hmc_sample(const LogDensityFn& f, const Eigen::VectorXd& z0, const HmcConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = z0.size();
  const std::size_t n_post = cfg.n_samples * static_cast<std::size_t>(cfg.thin);
  const auto n_burn = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_post) * cfg.burn_in_fraction / (1.0 - cfg.burn_in_fraction)));

  HmcResult r;
  r.n_burn_in = n_burn;
  r.n_iterations = n_burn + n_post;
  r.samples.resize(static_cast<Eigen::Index>(cfg.n_samples), d);
  r.log_density.resize(static_cast<Eigen::Index>(cfg.n_samples));

  Rng rng = make_rng(cfg.seed, 0x686d63ULL);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd z = z0, grad(d);
  double logp = f(z, grad);
  ++r.gradient_evaluations;
  if (!std::isfinite(logp) || !grad.allFinite()) throw ValidationError("hmc: non-finite log density at the start point");

  double log_eps = std::log(cfg.initial_step);
  double acc_burn = 0, acc_post = 0;
  std::size_t accepted_post = 0, kept = 0;

  for (std::size_t t = 1; t <= r.n_iterations; ++t) {
    const double eps = std::exp(log_eps) * (1.0 + cfg.step_jitter * (2.0 * unif(rng) - 1.0));
    Eigen::VectorXd p = standard_normal(rng, d, 1);
    const double h0 = -logp + 0.5 * p.squaredNorm();
    Eigen::VectorXd z1 = z, g1 = grad, p1 = p;
    double logp1 = logp;
    double alpha = 0.0;
    try {
      leapfrog(f, z1, p1, eps, cfg.n_leapfrog, logp1, g1);
      const double h1 = -logp1 + 0.5 * p1.squaredNorm();
      alpha = std::isfinite(h1) ? std::min(1.0, std::exp(h0 - h1)) : 0.0;
    } catch (const NumericalError&) {
      alpha = 0.0;
    }
    r.gradient_evaluations += static_cast<std::uint64_t>(cfg.n_leapfrog);
    const bool accept = unif(rng) < alpha;
    if (accept) {
      z = z1;
      grad = g1;
      logp = logp1;
    }
    if (t <= n_burn) {
      acc_burn += alpha;
      log_eps += 0.1 / std::sqrt(static_cast<double>(t)) * (alpha - cfg.target_accept);
      continue;
    }
    acc_post += alpha;
    if (accept) ++accepted_post;
    const std::size_t k = t - n_burn;
    if (k % static_cast<std::size_t>(cfg.thin) == 0) {
      r.samples.row(static_cast<Eigen::Index>(kept)) = z.transpose();
      r.log_density(static_cast<Eigen::Index>(kept)) = logp;
      ++kept;
    }
  }
  r.step_size = std::exp(log_eps);
  r.burn_in_acceptance = n_burn ? acc_burn / static_cast<double>(n_burn) : 0.0;
  r.acceptance_rate = acc_post / static_cast<double>(n_post);
  r.all_rejected = accepted_post == 0;
  return r;
}

LogDensityFn latent_log_posterior(std::shared_ptr<const gan::Generator> generator, const fwd::ForwardProblem& problem) {
  if (!generator) throw ValidationError("hmc: no generator");
  problem.validate();
  if (problem.model->input_dim() != generator->n_x())
    throw ShapeError("hmc: generator output does not match the forward model input");

  struct State {
    ad::Graph graph;
    ad::Var out;
    ParamVector input;
    std::vector<std::string> names{"z"};
    std::shared_ptr<const gan::Generator> generator;
    std::shared_ptr<const fwd::ForwardModel> model;
  };
  auto st = std::make_shared<State>();
  st->generator = generator;
  st->model = problem.model;
  const Eigen::Index n_z = generator->n_z();
  st->input.add("z", Tensor::Zero(1, n_z));
  const ad::Var z = st->graph.input("z", Tensor::Zero(1, n_z));
  const auto gp = st->graph.bind_constants(generator->params());
  const ad::Var x = generator->rescaler.unrescale(generator->forward(gp, z));
  st->out = ad::sum(fwd::log_likelihood(problem, x)) + ad::sum(vi::log_standard_normal(z));

  return [st](const Eigen::VectorXd& zv, Eigen::VectorXd& grad) -> double {
    if (zv.size() != st->input.flat().size()) throw ShapeError("hmc: latent dimension mismatch");
    st->input.flat() = zv;
    st->model->record_solves(1);
    double v = 0;
    try {
      v = st->graph.evaluate(st->input, st->out)(0, 0);
    } catch (const NumericalError&) {
      grad.setZero(zv.size());
      return -std::numeric_limits<double>::infinity();
    }
    grad = st->graph.gradient(st->out, st->names).flat();
    return v;
  };
}

void write_samples_csv(const std::filesystem::path& path, const Tensor& samples, const std::string& prefix) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << prefix << j;
  out << '\n';
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j) out << (j ? "," : "") << samples(i, j);
    out << '\n';
  }
}

Tensor read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty sample file");
  const auto cols = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ',') + 1);
  std::vector<double> vals;
  Eigen::Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index c = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ValidationError(path.string() + ": bad number '" + cell + "'");
      }
      ++c;
    }
    if (c != cols) throw ValidationError(path.string() + ": ragged row " + std::to_string(rows + 2));
    ++rows;
  }
  Tensor out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = vals[static_cast<std::size_t>(i * cols + j)];
  return out;
}

// ---- importance sampling ------------------------------------------------------------

Eigen::VectorXd normalized_weights(const Eigen::VectorXd& loglik) {
  if (loglik.size() == 0) throw ValidationError("importance sampling: no samples");
  const double m = loglik.maxCoeff();
  if (!std::isfinite(m)) throw NumericalError("importance sampling: no finite log-likelihood");
  Eigen::VectorXd w = (loglik.array() - m).exp();
  return w / w.sum();
}

namespace {

// Two passes over weighted items, each reduced chunk-wise in index order.
// item(i) yields (x, normalized weight w, multiplicity).
struct Item {
  Eigen::VectorXd x;
  double w;
  double count;
};

ImportanceResult weighted_moments(const std::function<Item(std::size_t)>& item, std::size_t items, Eigen::Index d,
                                  unsigned workers) {
  const std::size_t n_chunks = (items + kChunk - 1) / kChunk;
  auto reduce = [&](auto&& body) {
    std::vector<Eigen::VectorXd> a(n_chunks, Eigen::VectorXd::Zero(d)), b(n_chunks, Eigen::VectorXd::Zero(d));
    parallel_for(
        n_chunks,
        [&](std::size_t c) {
          for (std::size_t i = c * kChunk; i < std::min(items, (c + 1) * kChunk); ++i) body(item(i), a[c], b[c]);
        },
        workers);
    std::pair<Eigen::VectorXd, Eigen::VectorXd> out{Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
    for (std::size_t c = 0; c < n_chunks; ++c) {
      out.first += a[c];
      out.second += b[c];
    }
    return out;
  };
  // b(0) carries sum w^2 in the first pass
  const auto [mean, w2v] = reduce([](const Item& it, Eigen::VectorXd& a, Eigen::VectorXd& b) {
    a += (it.count * it.w) * it.x;
    b(0) += it.count * it.w * it.w;
  });
  const Eigen::VectorXd m = mean;
  const auto [var, se2] = reduce([&m](const Item& it, Eigen::VectorXd& a, Eigen::VectorXd& b) {
    const Eigen::VectorXd r2 = (it.x - m).cwiseAbs2();
    a += (it.count * it.w) * r2;
    b += (it.count * it.w * it.w) * r2;
  });
  ImportanceResult r;
  r.mean = m;
  r.std = var.cwiseSqrt();
  r.mean_se = se2.cwiseSqrt();
  r.ess = 1.0 / w2v(0);
  r.unreliable = r.ess < kMinEss;
  return r;
}

double log_mean_exp(const Eigen::VectorXd& ll) {
  const double m = ll.maxCoeff();
  return m + std::log((ll.array() - m).exp().sum()) - std::log(static_cast<double>(ll.size()));
}

}  // namespace

ImportanceResult importance_estimate(const Tensor& x, const Eigen::VectorXd& loglik) {
  if (x.rows() != loglik.size()) throw ShapeError("importance sampling: one log-likelihood per sample required");
  const Eigen::VectorXd w = normalized_weights(loglik);
  ImportanceResult r = weighted_moments(
      [&](std::size_t i) {
        const auto k = static_cast<Eigen::Index>(i);
        return Item{x.row(k).transpose(), w(k), 1.0};
      },
      static_cast<std::size_t>(x.rows()), x.cols(), 1);
  r.n = static_cast<std::size_t>(x.rows());
  r.log_evidence = log_mean_exp(loglik);
  return r;
}

ImportanceResult importance_oracle(const std::function<Eigen::VectorXd(std::size_t)>& sample,
                                   const std::function<double(const Eigen::VectorXd&)>& loglik, std::size_t n,
                                   unsigned workers) {
  if (n == 0) throw ValidationError("importance sampling: n must be positive");
  Eigen::VectorXd ll(static_cast<Eigen::Index>(n));
  parallel_for(n, [&](std::size_t i) { ll(static_cast<Eigen::Index>(i)) = loglik(sample(i)); }, workers);
  const Eigen::VectorXd w = normalized_weights(ll);
  ImportanceResult r = weighted_moments(
      [&](std::size_t i) { return Item{sample(i), w(static_cast<Eigen::Index>(i)), 1.0}; }, n, sample(0).size(),
      workers);
  r.n = n;
  r.log_evidence = log_mean_exp(ll);
  return r;
}

namespace {

using CellKey = std::array<Eigen::Index, 4>;

CellKey key_of(const prior::RectCells& c) { return {c.row0, c.col0, c.row1, c.col1}; }

prior::RectCells cells_of(const CellKey& k) { return {k[0], k[1], k[2], k[3]}; }

}  // namespace

ImportanceResult rect_importance_oracle(const prior::RectPriorConfig& cfg, const fwd::ForwardProblem& problem,
                                        std::size_t n, std::uint64_t seed, unsigned workers) {
  if (n == 0) throw ValidationError("importance sampling: n must be positive");
  problem.validate();
  std::vector<CellKey> keys(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        Rng rng = make_rng(seed, i);
        keys[i] = key_of(prior::snap_rect(cfg, prior::draw_rect_params(cfg, rng)));
      },
      workers);
  std::map<CellKey, double> counts;
  for (const auto& k : keys) counts[k] += 1.0;

  const Eigen::Index d = cfg.n_p * cfg.n_p;
  Tensor fields(static_cast<Eigen::Index>(counts.size()), d);
  Eigen::VectorXd cnt(fields.rows());
  Eigen::Index r = 0;
  for (const auto& [k, c] : counts) {
    fields.row(r) = as_row(prior::rect_field(cfg, cells_of(k)));
    cnt(r++) = c;
  }
  const Eigen::VectorXd ll = fwd::log_likelihood(problem, fields);
  // per-sample weight of one draw in group k: exp(ll_k) / sum_j count_j exp(ll_j)
  const double m = ll.maxCoeff();
  if (!std::isfinite(m)) throw NumericalError("importance sampling: no finite log-likelihood");
  const Eigen::VectorXd e = (ll.array() - m).exp();
  const double z = cnt.dot(e);
  ImportanceResult res = weighted_moments(
      [&](std::size_t i) {
        const auto k = static_cast<Eigen::Index>(i);
        return Item{fields.row(k).transpose(), e(k) / z, cnt(k)};
      },
      static_cast<std::size_t>(fields.rows()), d, 1);
  res.n = n;
  res.log_evidence = m + std::log(z) - std::log(static_cast<double>(n));
  return res;
}

ImportanceResult rect_exact_posterior(const prior::RectPriorConfig& cfg, const fwd::ForwardProblem& problem) {
  problem.validate();
  const double h = cfg.spacing();
  const Eigen::Index last = cfg.n_p - 1;
  // P(node index = k) for v ~ U(lo, hi) snapped by clamp(round(v / h) - 1, 0, last)
  auto marginal = [&](double lo, double hi) {
    std::vector<std::pair<Eigen::Index, double>> out;
    for (Eigen::Index k = 0; k <= last; ++k) {
      const double a = k == 0 ? -std::numeric_limits<double>::infinity() : (static_cast<double>(k) + 0.5) * h;
      const double b = k == last ? std::numeric_limits<double>::infinity() : (static_cast<double>(k) + 1.5) * h;
      const double len = std::min(b, hi) - std::max(a, lo);
      if (len > 0) out.emplace_back(k, len / (hi - lo));
    }
    return out;
  };
  const double L = cfg.length;
  const auto near = marginal(cfg.corner_lo * L, cfg.corner_hi * L);
  const auto far = marginal(cfg.far_lo * L, cfg.far_hi * L);

  std::map<CellKey, double> prior_mass;
  for (const auto& [r0, p0] : near)
    for (const auto& [c0, p1] : near)
      for (const auto& [r1, p2] : far)
        for (const auto& [c1, p3] : far) {
          prior::RectCells c{r0, c0, r1, c1};
          if (c.row1 < c.row0) std::swap(c.row0, c.row1);
          if (c.col1 < c.col0) std::swap(c.col0, c.col1);
          prior_mass[key_of(c)] += p0 * p1 * p2 * p3;
        }

  const Eigen::Index d = cfg.n_p * cfg.n_p;
  Tensor fields(static_cast<Eigen::Index>(prior_mass.size()), d);
  Eigen::VectorXd logw(fields.rows());
  Eigen::Index r = 0;
  for (const auto& [k, p] : prior_mass) {
    fields.row(r) = as_row(prior::rect_field(cfg, cells_of(k)));
    logw(r++) = std::log(p);
  }
  const Eigen::VectorXd ll = fwd::log_likelihood(problem, fields);
  const Eigen::VectorXd w = normalized_weights(ll + logw);
  ImportanceResult res = weighted_moments(
      [&](std::size_t i) {
        const auto k = static_cast<Eigen::Index>(i);
        return Item{fields.row(k).transpose(), w(k), 1.0};
      },
      static_cast<std::size_t>(fields.rows()), d, 1);
  res.n = static_cast<std::size_t>(fields.rows());
  // exact: no sampling error
  res.mean_se.setZero();
  res.unreliable = false;
  const Eigen::VectorXd t = ll + logw;
  const double m = t.maxCoeff();
  res.log_evidence = m + std::log((t.array() - m).exp().sum());
  return res;
}

// ---- conjugate Gaussian ---------------------------------------------------------------

void ConjugateCase::validate() const {
  if (a_g.rows() != b_g.size()) throw ShapeError("conjugate case: A_g rows must match b_g");
  if (f_lin.cols() != a_g.rows()) throw ShapeError("conjugate case: F columns must match A_g rows");
  if (y_hat.size() != f_lin.rows()) throw ShapeError("conjugate case: y_hat length must match F rows");
  if (!(sigma2 > 0) || !std::isfinite(sigma2)) throw ValidationError("conjugate case: sigma2 must be positive");
  if (!a_g.allFinite() || !b_g.allFinite() || !f_lin.allFinite() || !y_hat.allFinite())
    throw ValidationError("conjugate case: non-finite entries");
}

ConjugatePosterior conjugate_posterior(const ConjugateCase& c) {
  c.validate();
  const Tensor m = c.f_lin * c.a_g;
  const Eigen::Index n_z = m.cols();
  ConjugatePosterior out;
  out.precision = Tensor::Identity(n_z, n_z) + m.transpose() * m / c.sigma2;
  const Eigen::LLT<Tensor> llt(out.precision);
  if (llt.info() != Eigen::Success) throw NumericalError("conjugate posterior: singular precision");
  const Eigen::VectorXd r = c.y_hat - c.f_lin * c.b_g;
  out.mean = llt.solve(m.transpose() * r) / c.sigma2;
  out.cov = llt.solve(Tensor::Identity(n_z, n_z));
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();

  // y ~ N(F b, M M^T + sigma2 I)
  const Eigen::Index n_y = m.rows();
  const Tensor s = m * m.transpose() + c.sigma2 * Tensor::Identity(n_y, n_y);
  const Eigen::LLT<Tensor> ls(s);
  if (ls.info() != Eigen::Success) throw NumericalError("conjugate posterior: singular evidence covariance");
  const double logdet = 2.0 * Tensor(ls.matrixL()).diagonal().array().log().sum();
  out.log_evidence =
      -0.5 * (r.dot(ls.solve(r)) + logdet + static_cast<double>(n_y) * std::log(2.0 * std::numbers::pi));
  return out;
}

ConjugateCase random_conjugate_case(Eigen::Index n_z, Eigen::Index n_x, Eigen::Index n_y, double sigma2,
                                    std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x636f6eULL);
  ConjugateCase c;
  c.a_g = standard_normal(rng, n_x, n_z) / std::sqrt(static_cast<double>(n_z));
  c.b_g = 0.1 * standard_normal(rng, n_x, 1);
  c.f_lin = standard_normal(rng, n_y, n_x) / std::sqrt(static_cast<double>(n_x));
  c.sigma2 = sigma2;
  const Eigen::VectorXd z_true = standard_normal(rng, n_z, 1);
  c.y_hat = c.f_lin * (c.a_g * z_true + c.b_g) + std::sqrt(sigma2) * standard_normal(rng, n_y, 1);
  return c;
}

}  // namespace ganflow::samplers
