#include "ganflow/gan_prior.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <numeric>

#include "ganflow/config.hpp"
#include "ganflow/errors.hpp"

namespace ganflow::gan {

namespace {

std::filesystem::path sidecar(const std::filesystem::path& p) {
  auto s = p;
  return s.replace_extension(".toml");
}

toml::Array to_array(const std::vector<Eigen::Index>& v) {
  toml::Array out;
  for (auto x : v) out.emplace_back(static_cast<std::int64_t>(x));
  return out;
}

std::vector<Eigen::Index> to_widths(const std::vector<std::int64_t>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

// ---- Generator --------------------------------------------------------------------

nn::Mlp Generator::mlp() const {
  nn::Mlp m{"g", {n_z_}, nn::Activation::LeakyRelu, nn::Activation::Tanh};
  for (auto h : hidden_) m.widths.push_back(h);
  m.widths.push_back(n_x_);
  return m;
}

Generator Generator::dense(Eigen::Index n_z, Eigen::Index n_x, std::vector<Eigen::Index> hidden, std::uint64_t seed) {
  if (n_z < 1 || n_x < 1) throw ValidationError("generator dimensions must be positive");
  Generator g;
  g.kind_ = GeneratorKind::Dense;
  g.n_z_ = n_z;
  g.n_x_ = n_x;
  g.hidden_ = std::move(hidden);
  Rng rng = make_rng(seed, 0x67656eULL);
  g.mlp().init(g.params_, rng, std::sqrt(2.0));
  return g;
}

Generator Generator::affine(const Tensor& a, const Eigen::VectorXd& b) {
  if (a.rows() != b.size()) throw ShapeError("affine generator: A rows must match b");
  if (!a.allFinite() || !b.allFinite()) throw ValidationError("affine generator: non-finite parameters");
  Generator g;
  g.kind_ = GeneratorKind::Affine;
  g.n_z_ = a.cols();
  g.n_x_ = a.rows();
  g.params_.add("g.a", a);
  g.params_.add("g.b", b.transpose());
  return g;
}

Tensor Generator::matrix() const {
  if (kind_ != GeneratorKind::Affine) throw ValidationError("generator is not affine");
  return params_.get("g.a");
}

Eigen::VectorXd Generator::offset() const {
  if (kind_ != GeneratorKind::Affine) throw ValidationError("generator is not affine");
  return params_.get("g.b").transpose();
}

ad::Var Generator::forward(const ad::Bindings& p, ad::Var z) const {
  if (z.cols() != n_z_) throw ShapeError("generator: latent input must have " + std::to_string(n_z_) + " columns");
  if (kind_ == GeneratorKind::Affine) return ad::affine(z, p.at("g.a"), p.at("g.b"));
  return mlp().forward(p, z);
}

Tensor Generator::forward(const Tensor& z) const {
  if (z.cols() != n_z_) throw ShapeError("generator: latent input must have " + std::to_string(n_z_) + " columns");
  if (kind_ == GeneratorKind::Affine) {
    Tensor out = z * params_.get("g.a").transpose();
    out.rowwise() += params_.get("g.b").row(0);
    return out;
  }
  return mlp().forward(params_, z);
}

Tensor Generator::sample_prior(std::size_t n, std::uint64_t seed) const {
  if (n == 0) return Tensor(0, n_x_);
  Rng rng = make_rng(seed, 0);
  return forward_data(standard_normal(rng, static_cast<Eigen::Index>(n), n_z_));
}

void Generator::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  params_.save(path);
  toml::Document doc;
  auto& t = doc.table("generator");
  t.set("kind", kind_name());
  t.set("n_z", static_cast<std::int64_t>(n_z_));
  t.set("n_x", static_cast<std::int64_t>(n_x_));
  t.set("hidden", to_array(hidden_));
  t.set("hidden_activation", "leaky_relu_0.2");
  t.set("output_activation", kind_ == GeneratorKind::Dense ? "tanh" : "identity");
  t.set("rescale_lo", rescaler.lo);
  t.set("rescale_hi", rescaler.hi);
  t.set("params", path.filename().string());
  doc.save(sidecar(path));
}

Generator Generator::load(const std::filesystem::path& path) {
  const auto doc = toml::Document::load(sidecar(path));
  const auto& t = doc.section("generator");
  Generator g;
  const std::string kind = t.get_string("kind");
  if (kind == "dense")
    g.kind_ = GeneratorKind::Dense;
  else if (kind == "affine")
    g.kind_ = GeneratorKind::Affine;
  else
    throw ValidationError("unknown generator kind '" + kind + "'");
  g.n_z_ = t.get_int("n_z");
  g.n_x_ = t.get_int("n_x");
  if (t.contains("hidden")) g.hidden_ = to_widths(t.get_ints("hidden"));
  g.rescaler = prior::Rescaler(t.get_double("rescale_lo"), t.get_double("rescale_hi"));
  g.params_ = ParamVector::load(path);
  // Validate the payload against the architecture.
  ParamVector expect;
  if (g.kind_ == GeneratorKind::Dense) {
    Rng rng(0);
    g.mlp().init(expect, rng);
  } else {
    expect.add("g.a", Tensor::Zero(g.n_x_, g.n_z_));
    expect.add("g.b", Tensor::Zero(1, g.n_x_));
  }
  if (expect.names() != g.params_.names() || expect.size() != g.params_.size())
    throw ShapeError("generator payload does not match its sidecar architecture");
  return g;
}

// ---- Critic -----------------------------------------------------------------------

Critic Critic::dense(Eigen::Index n_x, std::vector<Eigen::Index> hidden, std::uint64_t seed) {
  Critic c;
  c.mlp_ = nn::Mlp{"d", {n_x}, nn::Activation::LeakyRelu, nn::Activation::Identity};
  for (auto h : hidden) c.mlp_.widths.push_back(h);
  c.mlp_.widths.push_back(1);
  Rng rng = make_rng(seed, 0x637269ULL);
  c.mlp_.init(c.params_, rng, std::sqrt(2.0));
  return c;
}

Critic Critic::linear(const Eigen::RowVectorXd& w, double c0) {
  Critic c;
  c.mlp_ = nn::Mlp{"d", {w.size(), 1}, nn::Activation::Identity, nn::Activation::Identity};
  c.params_.add("d.w0", w);
  c.params_.add("d.b0", Tensor::Constant(1, 1, c0));
  return c;
}

void Critic::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  params_.save(path);
  toml::Document doc;
  auto& t = doc.table("critic");
  t.set("widths", to_array(mlp_.widths));
  t.set("params", path.filename().string());
  doc.save(sidecar(path));
}

// ---- losses -----------------------------------------------------------------------

namespace {

ad::Var interpolate(ad::Var x_real, ad::Var x_fake, const Eigen::VectorXd& eps) {
  if (x_real.rows() != x_fake.rows() || x_real.cols() != x_fake.cols())
    throw ShapeError("gradient penalty: real and fake batches differ in shape");
  if (eps.size() != x_real.rows()) throw ShapeError("gradient penalty: one eps per pair required");
  auto& g = *x_real.graph;
  const ad::Var e = ad::broadcast(g.constant(eps), x_real.rows(), x_real.cols());
  return e * x_real + (1.0 - e) * x_fake;
}

}  // namespace

ad::Var gradient_penalty(const CriticFn& critic, ad::Var x_real, ad::Var x_fake, const Eigen::VectorXd& eps) {
  const ad::Var xt = interpolate(x_real, x_fake, eps);
  const ad::Var grad = ad::gradient_as_nodes(ad::sum(critic(xt)), xt);
  return ad::mean(ad::square(ad::norm2_rows(grad) - 1.0));
}

ad::Var gradient_penalty_fd(const CriticFn& critic, ad::Var x_real, ad::Var x_fake, const Eigen::VectorXd& eps,
                            double h) {
  const ad::Var xt = interpolate(x_real, x_fake, eps);
  auto& g = *x_real.graph;
  Tensor dir = x_real.value() - x_fake.value();
  for (Eigen::Index i = 0; i < dir.rows(); ++i) {
    const double n = dir.row(i).norm();
    if (n > 0) dir.row(i) /= n;
  }
  const ad::Var step = g.constant(h * dir);
  const ad::Var slope = (1.0 / (2.0 * h)) * (critic(xt + step) - critic(xt - step));
  return ad::mean(ad::square(ad::sqrt(ad::square(slope) + 1e-12) - 1.0));
}

double gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& x_fake, Rng& rng) {
  Eigen::VectorXd eps(x_real.rows());
  for (auto& e : eps) e = uniform(rng, 0.0, 1.0);
  ad::Graph g;
  const auto p = g.bind_constants(critic.params());
  const CriticFn d = [&](ad::Var x) { return critic.forward(p, x); };
  return gradient_penalty(d, g.constant(x_real), g.constant(x_fake), eps).scalar();
}

WganLosses wgan_losses(const CriticFn& critic, ad::Var x_real, ad::Var x_fake, double lambda,
                       const Eigen::VectorXd& eps, bool fd_penalty) {
  if (x_real.rows() == 0) throw ValidationError("wgan losses: empty batch");
  if (!(lambda >= 0)) throw ValidationError("wgan losses: lambda must be >= 0");
  WganLosses out;
  const ad::Var d_real = ad::mean(critic(x_real));
  const ad::Var d_fake = ad::mean(critic(x_fake));
  out.wasserstein = d_real - d_fake;
  out.penalty = fd_penalty ? gradient_penalty_fd(critic, x_real, x_fake, eps)
                           : gradient_penalty(critic, x_real, x_fake, eps);
  out.critic_loss = lambda * out.penalty - out.wasserstein;
  out.gen_loss = -d_fake;
  return out;
}

WganLossValues wgan_losses(const Tensor& x_real, const Tensor& z, const Generator& gen, const Critic& d, double lambda,
                           Rng& rng) {
  if (x_real.rows() != z.rows()) throw ShapeError("wgan losses: real and latent batches differ in size");
  Eigen::VectorXd eps(x_real.rows());
  for (auto& e : eps) e = uniform(rng, 0.0, 1.0);
  ad::Graph g;
  const auto pd = g.bind_constants(d.params());
  const auto pg = g.bind_constants(gen.params());
  const CriticFn critic = [&](ad::Var x) { return d.forward(pd, x); };
  const ad::Var fake = gen.forward(pg, g.constant(z));
  const auto l = wgan_losses(critic, g.constant(x_real), fake, lambda, eps);
  return {l.critic_loss.scalar(), l.gen_loss.scalar(), l.penalty.scalar(), l.wasserstein.scalar()};
}

// ---- training ---------------------------------------------------------------------

void GanTrainConfig::validate() const {
  if (!(lambda >= 0)) throw ValidationError("gan: lambda must be >= 0");
  if (n_critic < 1) throw ValidationError("gan: n_critic must be >= 1");
  if (batch < 2) throw ValidationError("gan: batch must be >= 2");
  if (epochs < 1) throw ValidationError("gan: epochs must be >= 1");
  if (!(adam.lr > 0)) throw ValidationError("gan: learning rate must be positive");
  if (patience < 0 || ma_window < 1) throw ValidationError("gan: bad early-stopping settings");
}

void write_gan_history(const std::filesystem::path& path, const std::vector<GanEpoch>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,critic_loss,gen_loss,wasserstein,penalty\n";
  for (const auto& e : history)
    out << e.epoch << ',' << e.critic_loss << ',' << e.gen_loss << ',' << e.wasserstein << ',' << e.penalty << '\n';
}

namespace {

std::vector<Eigen::Index> canonical_order(const Tensor& data) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      if (data(a, j) < data(b, j)) return true;
      if (data(a, j) > data(b, j)) return false;
    }
    return false;
  });
  return idx;
}

Tensor gather(const Tensor& data, const std::vector<Eigen::Index>& rows, std::size_t lo, std::size_t hi) {
  Tensor out(static_cast<Eigen::Index>(hi - lo), data.cols());
  for (std::size_t i = lo; i < hi; ++i) out.row(static_cast<Eigen::Index>(i - lo)) = data.row(rows[i]);
  return out;
}

}  // namespace

GanTrainResult train_wgan(const Tensor& data, Generator& generator, Critic& critic, const GanTrainConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  if (data.cols() != generator.n_x() || data.cols() != critic.n_x())
    throw ShapeError("gan: data width does not match the generator/critic");
  if (data.rows() < cfg.batch) throw ValidationError("gan: dataset smaller than one batch");
  if (!data.allFinite()) throw ValidationError("gan: dataset contains non-finite values");

  const std::vector<Eigen::Index> base = canonical_order(data);
  Rng shuffle_rng = make_rng(seed, 1);
  Rng z_rng = make_rng(seed, 2);
  Rng eps_rng = make_rng(seed, 3);

  Adam opt_d(cfg.adam);
  Adam opt_g(cfg.adam);
  const auto d_names = critic.params().names();
  const auto g_names = generator.params().names();
  const auto n_batches = static_cast<std::size_t>(data.rows() / cfg.batch);

  GanTrainResult result;
  std::deque<double> window;
  double best_ma = std::numeric_limits<double>::infinity();
  int since_best = 0;
  long critic_steps = 0;

  auto fail = [&](const std::string& what) {
    if (!cfg.history_path.empty()) write_gan_history(cfg.history_path, result.history);
    throw NumericalError("gan training diverged: " + what);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Eigen::Index> order = base;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum_c = 0, sum_g = 0, sum_w = 0, sum_p = 0;
    int n_c = 0, n_g = 0;

    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      const Tensor real = gather(data, order, bi * static_cast<std::size_t>(cfg.batch),
                                 (bi + 1) * static_cast<std::size_t>(cfg.batch));
      const Eigen::Index n = real.rows();

      // Critic step.
      {
        const Tensor z = standard_normal(z_rng, n, generator.n_z());
        const Tensor fake = generator.forward(z);
        Eigen::VectorXd eps(n);
        for (auto& e : eps) e = uniform(eps_rng, 0.0, 1.0);
        ad::Graph g;
        const auto pd = g.bind_inputs(critic.params());
        const CriticFn dfn = [&](ad::Var x) { return critic.forward(pd, x); };
        WganLosses l;
        try {
          l = wgan_losses(dfn, g.constant(real), g.constant(fake), cfg.lambda, eps, cfg.fd_penalty_debug);
        } catch (const NumericalError& e) {
          fail(std::string("critic loss: ") + e.what());
        }
        const double lc = l.critic_loss.scalar();
        if (!std::isfinite(lc)) fail("non-finite critic loss");
        ParamVector grad;
        try {
          grad = g.gradient(l.critic_loss, d_names);
          opt_d.step(critic.params(), grad);
        } catch (const NumericalError& e) {
          fail(std::string("critic gradient: ") + e.what());
        }
        sum_c += lc;
        sum_w += l.wasserstein.scalar();
        sum_p += l.penalty.scalar();
        ++n_c;
        ++critic_steps;
      }

      // Generator step after every n_critic critic steps.
      if (critic_steps % cfg.n_critic == 0) {
        const Tensor z = standard_normal(z_rng, n, generator.n_z());
        ad::Graph g;
        const auto pg = g.bind_inputs(generator.params());
        const auto pd = g.bind_constants(critic.params());
        try {
          const ad::Var fake = generator.forward(pg, g.constant(z));
          const ad::Var loss = -ad::mean(critic.forward(pd, fake));
          const double lg = loss.scalar();
          if (!std::isfinite(lg)) fail("non-finite generator loss");
          opt_g.step(generator.params(), g.gradient(loss, g_names));
          sum_g += lg;
          ++n_g;
        } catch (const NumericalError& e) {
          fail(std::string("generator step: ") + e.what());
        }
      }
    }

    GanEpoch rec{epoch, sum_c / n_c, n_g ? sum_g / n_g : 0.0, sum_w / n_c, sum_p / n_c};
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (cfg.log_every > 0 && epoch % cfg.log_every == 0)
      std::cerr << "[gan] epoch " << epoch << " critic " << rec.critic_loss << " wasserstein " << rec.wasserstein
                << " penalty " << rec.penalty << "\n";

    window.push_back(rec.wasserstein);
    if (static_cast<int>(window.size()) > cfg.ma_window) window.pop_front();
    if (cfg.patience > 0 && static_cast<int>(window.size()) == cfg.ma_window) {
      const double ma = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
      if (ma < best_ma) {
        best_ma = ma;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  if (!cfg.history_path.empty()) write_gan_history(cfg.history_path, result.history);
  return result;
}

}  // namespace ganflow::gan
