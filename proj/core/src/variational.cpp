#include "ganflow/variational.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ganflow/errors.hpp"

namespace ganflow::vi {

namespace {

constexpr Eigen::Index kChunk = 4096;

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

}  // namespace

void VIConfig::validate() const {
  if (batch < 2) throw ValidationError("vi: batch must be >= 2");
  if (epochs < 1) throw ValidationError("vi: epochs must be >= 1");
  if (!(adam.lr > 0)) throw ValidationError("vi: learning rate must be positive");
  if (!(lr_final_factor > 0 && lr_final_factor <= 1)) throw ValidationError("vi: lr_final_factor must be in (0, 1]");
  if (patience < 0 || ma_window < 1) throw ValidationError("vi: bad early-stopping settings");
  if (history_stride < 1) throw ValidationError("vi: history_stride must be >= 1");
}

void LatentPosteriorModel::validate() const {
  if (!generator) throw ValidationError("vi: no generator");
  if (flow.n_z() != generator->n_z()) throw ShapeError("vi: flow and generator latent dimensions differ");
  if (!prior_only) {
    problem.validate();
    if (problem.model->input_dim() != generator->n_x())
      throw ShapeError("vi: generator output does not match the forward model input");
  }
}

Eigen::VectorXd log_standard_normal(const Tensor& z) {
  return (-0.5 * z.rowwise().squaredNorm()).array() - 0.5 * static_cast<double>(z.cols()) * kLog2Pi;
}

ad::Var log_standard_normal(ad::Var z) {
  return -0.5 * ad::sum_cols(ad::square(z)) - 0.5 * static_cast<double>(z.cols()) * kLog2Pi;
}

LossVars nf_loss(const LatentPosteriorModel& model, const ad::Bindings& flow_params, ad::Var z) {
  model.validate();
  auto& g = *z.graph;
  const flows::FlowVars h = model.flow.forward(flow_params, z);
  LossVars out;
  out.logdet = h.logdet;
  out.logprior = log_standard_normal(h.y);
  if (model.prior_only) {
    out.loglik = g.constant(Tensor::Zero(z.rows(), 1));
  } else {
    const auto gp = g.bind_constants(model.generator->params());
    const ad::Var x = model.generator->rescaler.unrescale(model.generator->forward(gp, h.y));
    out.loglik = fwd::log_likelihood(model.problem, x);
  }
  out.loss = -ad::mean(out.loglik + out.logprior + out.logdet);
  return out;
}

LossValues nf_loss_value(const LatentPosteriorModel& model, const Tensor& z) {
  if (z.rows() == 0) throw ValidationError("vi: empty batch");
  LossValues out;
  out.per_sample.resize(z.rows());
  double ll = 0, lp = 0, ld = 0;
  for (Eigen::Index r0 = 0; r0 < z.rows(); r0 += kChunk) {
    const Eigen::Index m = std::min(kChunk, z.rows() - r0);
    ad::Graph g;
    const auto p = g.bind_constants(model.flow.params());
    const LossVars l = nf_loss(model, p, g.constant(z.middleRows(r0, m)));
    const auto& a = l.loglik.value();
    const auto& b = l.logprior.value();
    const auto& c = l.logdet.value();
    out.per_sample.segment(r0, m) = -(a + b + c).col(0);
    ll += a.sum();
    lp += b.sum();
    ld += c.sum();
  }
  const double n = static_cast<double>(z.rows());
  out.loglik_term = -ll / n;
  out.prior_term = -lp / n;
  out.logdet_term = -ld / n;
  out.loss = out.per_sample.mean();
  return out;
}

void write_vi_history(const std::filesystem::path& path, const std::vector<VIRecord>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  out << "step,epoch,loss,loglik_term,prior_term,logdet_term,forward_solves\n";
  for (const auto& r : history)
    out << r.step << ',' << r.epoch << ',' << r.loss << ',' << r.loglik_term << ',' << r.prior_term << ','
        << r.logdet_term << ',' << r.forward_solves << '\n';
}

VIResult train_flow(LatentPosteriorModel& model, const VIConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  model.validate();
  Rng rng = make_rng(seed, 0x7669ULL);
  Adam opt(cfg.adam);
  const auto names = model.flow.params().names();
  const std::uint64_t solves0 = model.prior_only ? 0 : model.problem.model->solve_count();
  auto solves = [&] { return model.prior_only ? std::uint64_t{0} : model.problem.model->solve_count() - solves0; };

  VIResult result;
  std::deque<double> window;
  double window_sum = 0;
  double best_ma = std::numeric_limits<double>::infinity();
  int since_best = 0;
  // plateau -> final annealing tail of `patience` epochs, then stop
  int tail_start = 0, tail_len = 0;
  double tail_lr = 0;
  const double lr_min = cfg.adam.lr * cfg.lr_final_factor;
  auto cosine = [](double hi, double lo, double frac) {
    return lo + (hi - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };

  auto fail = [&](const std::string& what) {
    result.forward_solves = solves();
    if (!cfg.history_path.empty()) write_vi_history(cfg.history_path, result.history);
    throw NumericalError("flow training diverged at epoch " + std::to_string(result.epochs_run + 1) + ": " + what);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Tensor z = standard_normal(rng, cfg.batch, model.flow.n_z());
    if (!model.flow.initialized()) model.flow.actnorm_init(z);

    ad::Graph g;
    const auto p = g.bind_inputs(model.flow.params());
    LossVars l;
    try {
      l = nf_loss(model, p, g.constant(z));
    } catch (const NumericalError& e) {
      fail(e.what());
    }
    const double n = static_cast<double>(cfg.batch);
    const VIRecord rec{epoch,
                       epoch,
                       l.loss.scalar(),
                       -l.loglik.value().sum() / n,
                       -l.logprior.value().sum() / n,
                       -l.logdet.value().sum() / n,
                       solves()};
    if (!std::isfinite(rec.loss)) {
      result.history.push_back(rec);
      std::ostringstream os;
      os << "non-finite loss (loglik_term " << rec.loglik_term << ", prior_term " << rec.prior_term
         << ", logdet_term " << rec.logdet_term << ")";
      fail(os.str());
    }
    if (tail_len > 0)
      opt.set_lr(cosine(tail_lr, lr_min, static_cast<double>(epoch - tail_start) / tail_len));
    else
      opt.set_lr(cosine(cfg.adam.lr, lr_min,
                        cfg.epochs > 1 ? static_cast<double>(epoch - 1) / (cfg.epochs - 1) : 0.0));
    try {
      opt.step(model.flow.params(), g.gradient(l.loss, names));
    } catch (const NumericalError& e) {
      result.history.push_back(rec);
      fail(e.what());
    }
    if ((epoch - 1) % cfg.history_stride == 0 || epoch == cfg.epochs) result.history.push_back(rec);
    result.epochs_run = epoch;
    if (cfg.log_every > 0 && epoch % cfg.log_every == 0)
      std::cerr << "[flow] epoch " << epoch << " loss " << rec.loss << "\n";

    window.push_back(rec.loss);
    window_sum += rec.loss;
    if (static_cast<int>(window.size()) > cfg.ma_window) {
      window_sum -= window.front();
      window.pop_front();
    }
    auto stop = [&] {
      if (result.history.empty() || result.history.back().step != epoch) result.history.push_back(rec);
    };
    if (tail_len > 0) {
      if (epoch >= tail_start + tail_len) {
        stop();
        break;
      }
    } else if (cfg.patience > 0 && static_cast<int>(window.size()) == cfg.ma_window) {
      const double ma = window_sum / static_cast<double>(window.size());
      if (ma < best_ma) {
        best_ma = ma;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.stopped_early = true;
        const int left = cfg.epochs - epoch;
        if (cfg.lr_final_factor >= 1.0 || left == 0) {
          stop();
          break;
        }
        tail_start = epoch;
        tail_len = std::min(cfg.patience, left);
        tail_lr = opt.config().lr;
      }
    }
  }
  result.forward_solves = solves();
  if (!cfg.history_path.empty()) write_vi_history(cfg.history_path, result.history);
  return result;
}

Tensor pushforward_samples(const flows::FlowModel& flow, std::size_t n, std::uint64_t seed) {
  if (n == 0) return Tensor(0, flow.n_z());
  Rng rng = make_rng(seed, 0);
  return flow.forward(standard_normal(rng, static_cast<Eigen::Index>(n), flow.n_z())).y;
}

ElboReport elbo_diagnostics(const LatentPosteriorModel& model, std::size_t n, std::uint64_t seed,
                            std::optional<double> log_evidence) {
  if (n < 2) throw ValidationError("elbo diagnostics need at least 2 samples");
  model.validate();
  Rng rng = make_rng(seed, 0);
  const Tensor z = standard_normal(rng, static_cast<Eigen::Index>(n), model.flow.n_z());
  const LossValues v = nf_loss_value(model, z);
  ElboReport r;
  r.n = n;
  const double dn = static_cast<double>(n);
  r.loss_mean = v.loss;
  r.loss_se = std::sqrt((v.per_sample.array() - v.loss).square().sum() / (dn - 1.0) / dn);
  r.loglik_term = v.loglik_term;
  r.prior_term = v.prior_term;
  r.logdet_term = v.logdet_term;
  const Eigen::VectorXd elbo_i = -v.per_sample - log_standard_normal(z);
  r.elbo = elbo_i.mean();
  r.elbo_se = std::sqrt((elbo_i.array() - r.elbo).square().sum() / (dn - 1.0) / dn);
  if (log_evidence) r.kl = *log_evidence - r.elbo;
  const Tensor y = model.flow.forward(z).y;
  r.mean = y.colwise().mean().transpose();
  const Tensor c = y.rowwise() - r.mean.transpose();
  r.cov = c.transpose() * c / (dn - 1.0);
  return r;
}

double gaussian_kl(const Eigen::VectorXd& m0, const Tensor& s0, const Eigen::VectorXd& m1, const Tensor& s1) {
  const Eigen::LLT<Tensor> l1(s1);
  const Eigen::LLT<Tensor> l0(s0);
  if (l1.info() != Eigen::Success || l0.info() != Eigen::Success)
    throw NumericalError("gaussian_kl: covariance not positive definite");
  const auto k = static_cast<double>(m0.size());
  const Eigen::VectorXd d = m1 - m0;
  const double tr = l1.solve(s0).trace();
  const double quad = d.dot(l1.solve(d));
  const double logdet1 = 2.0 * Tensor(l1.matrixL()).diagonal().array().log().sum();
  const double logdet0 = 2.0 * Tensor(l0.matrixL()).diagonal().array().log().sum();
  return 0.5 * (tr + quad - k + logdet1 - logdet0);
}

}  // namespace ganflow::vi
