#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ganflow/errors.hpp"
#include "ganflow/gan_prior.hpp"
#include "ganflow/prior_data.hpp"
#include "test_support.hpp"

using namespace ganflow;
using namespace ganflow::gan;

namespace {

Eigen::VectorXd uniform_eps(std::mt19937_64& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd e(n);
  for (auto& v : e) v = u(rng);
  return e;
}

double critic_loss_value(const Critic& d, const Tensor& real, const Tensor& fake, const Eigen::VectorXd& eps,
                         double lambda) {
  ad::Graph g;
  const auto p = g.bind_constants(d.params());
  const CriticFn fn = [&](ad::Var x) { return d.forward(p, x); };
  return wgan_losses(fn, g.constant(real), g.constant(fake), lambda, eps).critic_loss.scalar();
}

Tensor sample_cov(const Tensor& x) {
  const Tensor c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

}  // namespace

TEST_CASE("zero critic: critic loss equals lambda, generator loss zero") {
  std::mt19937_64 rng(1);
  const Critic d = Critic::linear(Eigen::RowVectorXd::Zero(3), 0.0);
  const Tensor real = testing::randn(rng, 8, 3), fake = testing::randn(rng, 8, 3);
  ad::Graph g;
  const auto p = g.bind_constants(d.params());
  const CriticFn fn = [&](ad::Var x) { return d.forward(p, x); };
  const auto l = wgan_losses(fn, g.constant(real), g.constant(fake), 10.0, uniform_eps(rng, 8));
  CHECK(l.critic_loss.scalar() == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(l.gen_loss.scalar() == 0.0);
  CHECK(l.penalty.scalar() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("constant critic with lambda = 0 gives zero critic loss") {
  std::mt19937_64 rng(2);
  const Critic d = Critic::linear(Eigen::RowVectorXd::Zero(4), 3.5);
  const Tensor real = testing::randn(rng, 6, 4), fake = testing::randn(rng, 6, 4);
  CHECK(critic_loss_value(d, real, fake, uniform_eps(rng, 6), 0.0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("affine critics have penalty (|w| - 1)^2 for any batch and eps") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n_x = 2 + trial % 5;
    Eigen::RowVectorXd w = testing::randn(rng, 1, n_x);
    const double scale = (trial % 3 == 0) ? 1.0 : (trial % 3 == 1 ? 2.0 : 0.3 + 0.1 * trial);
    w *= scale / w.norm();
    const Critic d = Critic::linear(w, 0.7 * trial);
    const Eigen::Index n = 1 + trial % 9;
    const Tensor real = testing::randn(rng, n, n_x, 3.0), fake = testing::randn(rng, n, n_x, 3.0);
    Rng r = make_rng(static_cast<std::uint64_t>(trial), 0);
    const double pen = gradient_penalty(d, real, fake, r);
    CHECK(pen == doctest::Approx((scale - 1.0) * (scale - 1.0)).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("penalty gradient w.r.t. critic parameters matches finite differences") {
  std::mt19937_64 rng(4);
  Critic d = Critic::dense(3, {5}, 11);
  const Tensor real = testing::randn(rng, 6, 3), fake = testing::randn(rng, 6, 3);
  const Eigen::VectorXd eps = uniform_eps(rng, 6);
  ad::Graph g;
  const auto p = g.bind_inputs(d.params());
  const CriticFn fn = [&](ad::Var x) { return d.forward(p, x); };
  const ad::Var pen = gradient_penalty(fn, g.constant(real), g.constant(fake), eps);
  const auto names = d.params().names();
  const ParamVector grad = g.gradient(pen, names);
  const Eigen::VectorXd fd = ad::finite_difference_gradient(
      [&](const Eigen::VectorXd& flat) {
        ParamVector q = d.params();
        q.flat() = flat;
        return g.evaluate(q, pen)(0, 0);
      },
      d.params().flat(), 1e-6);
  CHECK(testing::rel_err(grad.flat(), fd) <= 1e-5);
}

TEST_CASE("finite-difference penalty approximates the exact one for smooth critics") {
  std::mt19937_64 rng(5);
  const Eigen::RowVectorXd w = testing::randn(rng, 1, 4);
  const Critic d = Critic::linear(w, 0.0);
  const Tensor real = testing::randn(rng, 5, 4), fake = testing::randn(rng, 5, 4);
  const Eigen::VectorXd eps = uniform_eps(rng, 5);
  ad::Graph g;
  const auto p = g.bind_constants(d.params());
  const CriticFn fn = [&](ad::Var x) { return d.forward(p, x); };
  const double exact = gradient_penalty(fn, g.constant(real), g.constant(fake), eps).scalar();
  const double fd = gradient_penalty_fd(fn, g.constant(real), g.constant(fake), eps).scalar();
  // a linear critic's directional slope along real - fake is w . dir
  double want = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    const Eigen::RowVectorXd dir = (real.row(i) - fake.row(i)).normalized();
    want += std::pow(std::abs(w.dot(dir)) - 1.0, 2);
  }
  CHECK(fd == doctest::Approx(want / 5.0).epsilon(1e-6));
  CHECK(exact == doctest::Approx(std::pow(w.norm() - 1.0, 2)).epsilon(1e-12));
}

TEST_CASE("value-level losses for concrete models") {
  std::mt19937_64 rng(6);
  const Generator gen = Generator::dense(2, 3, {8}, 1);
  const Critic d = Critic::linear(Eigen::RowVectorXd::Zero(3), 0.0);
  Rng r = make_rng(1, 0);
  const auto l = wgan_losses(testing::randn(rng, 4, 3), testing::randn(rng, 4, 2), gen, d, 10.0, r);
  CHECK(l.critic_loss == doctest::Approx(10.0));
  CHECK(l.gen_loss == 0.0);
  CHECK_THROWS_AS(wgan_losses(testing::randn(rng, 4, 3), testing::randn(rng, 5, 2), gen, d, 10.0, r), ShapeError);
}

TEST_CASE("one critic update decreases the critic loss on a frozen batch") {
  std::mt19937_64 rng(7);
  const Tensor real = testing::randn(rng, 16, 4), fake = testing::randn(rng, 16, 4, 0.5);
  const Eigen::VectorXd eps = uniform_eps(rng, 16);
  for (double lr : {1e-3, 1e-4}) {
    Critic d = Critic::dense(4, {16, 16}, 3);
    const double before = critic_loss_value(d, real, fake, eps, 10.0);
    ad::Graph g;
    const auto p = g.bind_inputs(d.params());
    const CriticFn fn = [&](ad::Var x) { return d.forward(p, x); };
    const auto l = wgan_losses(fn, g.constant(real), g.constant(fake), 10.0, eps);
    Adam opt({lr, 0.5, 0.99, 1e-8});
    opt.step(d.params(), g.gradient(l.critic_loss, d.params().names()));
    CHECK(critic_loss_value(d, real, fake, eps, 10.0) < before);
  }
}

TEST_CASE("dense generator outputs stay inside (-1, 1)") {
  const Generator g = Generator::dense(5, 64, {64, 128}, 8);
  Rng rng = make_rng(3, 0);
  for (int chunk = 0; chunk < 10; ++chunk) {
    const Tensor out = g.forward(standard_normal(rng, 10000, 5));
    CHECK(out.cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("affine generator prior samples follow N(b, A A^T)") {
  std::mt19937_64 rng(9);
  const Tensor a = testing::randn(rng, 6, 3);
  const Eigen::VectorXd b = testing::randn(rng, 6, 1);
  const Generator g = Generator::affine(a, b);
  CHECK(g.rescaler.lo == -1.0);
  CHECK(g.rescaler.hi == 1.0);
  const std::size_t n = 100000;
  const Tensor x = g.sample_prior(n, 21);
  CHECK(x.rows() == static_cast<Eigen::Index>(n));
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  const double op_norm = Eigen::JacobiSVD<Tensor>(a).singularValues()(0);
  CHECK((mean - b).norm() <= 3.0 * op_norm / std::sqrt(static_cast<double>(n)) * std::sqrt(6.0));
  CHECK(testing::rel_err(sample_cov(x), a * a.transpose()) <= 0.05);
  CHECK(g.sample_prior(0, 1).rows() == 0);
  CHECK(g.sample_prior(10, 5) == g.sample_prior(10, 5));
}

TEST_CASE("generator save/load round trip") {
  const auto dir = testing::scratch_dir("gan_io");
  Generator g = Generator::dense(3, 10, {7, 9}, 2);
  g.rescaler = prior::Rescaler(0.0, 4.0);
  g.save(dir / "g.gfp");
  CHECK(std::filesystem::exists(dir / "g.toml"));
  const Generator h = Generator::load(dir / "g.gfp");
  CHECK(h.kind() == GeneratorKind::Dense);
  CHECK(h.hidden() == g.hidden());
  CHECK(h.params().flat() == g.params().flat());
  CHECK(h.rescaler.hi == 4.0);
  std::mt19937_64 rng(1);
  const Tensor z = testing::randn(rng, 5, 3);
  CHECK(h.forward_data(z) == g.forward_data(z));

  std::mt19937_64 r2(2);
  const Generator a = Generator::affine(testing::randn(r2, 4, 2), testing::randn(r2, 4, 1));
  a.save(dir / "a.gfp");
  const Generator b = Generator::load(dir / "a.gfp");
  CHECK(b.matrix() == a.matrix());
  CHECK(b.offset() == a.offset());

  // payload and sidecar disagree
  Generator::dense(3, 11, {7, 9}, 2).params().save(dir / "g.gfp");
  CHECK_THROWS_AS(Generator::load(dir / "g.gfp"), ShapeError);
}

TEST_CASE("train_wgan: 2-D Gaussian toy recovers the mean") {
  const Eigen::RowVector2d mu(1.0, -1.0);
  Eigen::Matrix2d chol;
  chol << 0.5, 0.0, 0.2, 0.3;
  Rng rng = make_rng(100, 0);
  const Tensor raw = (standard_normal(rng, 4096, 2) * chol.transpose()).rowwise() + mu;
  const prior::Rescaler rs(-4.0, 4.0);
  Generator g = Generator::dense(2, 2, {32, 32}, 1);
  g.rescaler = rs;
  Critic d = Critic::dense(2, {32, 32}, 2);
  GanTrainConfig cfg;
  cfg.epochs = 150;
  cfg.adam.lr = 2e-4;
  cfg.batch = 64;
  cfg.patience = 0;
  const auto res = train_wgan(rs.rescale(raw), g, d, cfg, 3);
  CHECK(res.epochs_run == 150);
  const Tensor x = g.sample_prior(10000, 77);
  const Eigen::RowVector2d m = x.colwise().mean();
  MESSAGE("toy generator mean " << m);
  CHECK((m - mu).cwiseAbs().maxCoeff() <= 0.1);
}

TEST_CASE("train_wgan is deterministic and ignores the input row order") {
  Rng rng = make_rng(1, 0);
  const Tensor data = (0.3 * standard_normal(rng, 256, 3)).array().tanh().matrix();
  GanTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 32;
  auto run = [&](const Tensor& x) {
    Generator g = Generator::dense(2, 3, {8}, 5);
    Critic d = Critic::dense(3, {8}, 6);
    (void)train_wgan(x, g, d, cfg, 42);
    return g.params().flat();
  };
  const Eigen::VectorXd a = run(data);
  CHECK(a == run(data));
  std::vector<Eigen::Index> perm(256);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor shuffled(256, 3);
  for (Eigen::Index i = 0; i < 256; ++i) shuffled.row(i) = data.row(perm[static_cast<std::size_t>(i)]);
  CHECK(a == run(shuffled));
  Generator g = Generator::dense(2, 3, {8}, 5);
  Critic d = Critic::dense(3, {8}, 6);
  (void)train_wgan(data, g, d, cfg, 43);
  CHECK(g.params().flat() != a);
}

TEST_CASE("train_wgan aborts on divergence and dumps the history") {
  const auto dir = testing::scratch_dir("gan_div");
  Rng rng = make_rng(2, 0);
  const Tensor data = (standard_normal(rng, 128, 4)).array().tanh().matrix();
  Generator g = Generator::dense(2, 4, {16, 16}, 1);
  Critic d = Critic::dense(4, {16, 16}, 2);
  GanTrainConfig cfg;
  cfg.adam.lr = 1e100;
  cfg.epochs = 50;
  cfg.batch = 32;
  cfg.history_path = dir / "history.csv";
  CHECK_THROWS_AS(train_wgan(data, g, d, cfg, 1), NumericalError);
  CHECK(std::filesystem::exists(cfg.history_path));
}

TEST_CASE("train_wgan validates its configuration") {
  Generator g = Generator::dense(2, 3, {8}, 5);
  Critic d = Critic::dense(3, {8}, 6);
  const Tensor data = Tensor::Zero(64, 3);
  GanTrainConfig cfg;
  cfg.n_critic = 0;
  CHECK_THROWS_AS(train_wgan(data, g, d, cfg, 1), ValidationError);
  cfg = {};
  cfg.lambda = -1;
  CHECK_THROWS_AS(train_wgan(data, g, d, cfg, 1), ValidationError);
  cfg = {};
  CHECK_THROWS_AS(train_wgan(Tensor::Zero(64, 4), g, d, cfg, 1), ShapeError);
}

TEST_CASE("train_wgan on 16x16 rect fields puts pixels near the data support" * doctest::timeout(900)) {
  prior::DatasetSpec spec;
  spec.count = 2000;
  spec.seed = 7;
  const prior::Rescaler rs = prior::rescaler_for("heat");
  const Tensor data = rs.rescale(prior::generate_dataset(spec));
  Generator g = Generator::dense(5, 256, {64, 256}, 1);
  g.rescaler = rs;
  Critic d = Critic::dense(256, {256, 64}, 2);
  GanTrainConfig cfg;
  cfg.epochs = 150;
  cfg.patience = 0;
  (void)train_wgan(data, g, d, cfg, 9);
  Rng rng = make_rng(5, 0);
  const Tensor out = g.forward(standard_normal(rng, 1000, 5));
  // background pixels rescale to -1, inclusion values 2..4 to [0, 1]
  const double frac =
      static_cast<double>((out.array() <= -0.8 || out.array() >= -0.1).count()) / static_cast<double>(out.size());
  MESSAGE("fraction of generated pixels in the support band " << frac);
  CHECK(frac >= 0.95);
}
