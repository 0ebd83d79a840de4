#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "ganflow/errors.hpp"
#include "ganflow/samplers.hpp"
#include "ganflow/variational.hpp"
#include "test_support.hpp"

using namespace ganflow;
using namespace ganflow::vi;
using samplers::ConjugateCase;

namespace {

const double kLog2Pi = std::log(2 * std::numbers::pi);

LatentPosteriorModel conj_model(const ConjugateCase& c, flows::FlowModel flow) {
  LatentPosteriorModel m;
  m.flow = std::move(flow);
  m.generator = std::make_shared<const gan::Generator>(gan::Generator::affine(c.a_g, c.b_g));
  m.problem.model = std::make_shared<fwd::LinearForward>("linear", c.f_lin);
  m.problem.noise.sigma2 = c.sigma2;
  m.problem.y_hat = c.y_hat.transpose();
  return m;
}

// -log p(y | z) - log N(z; 0, I), written out directly.
double conj_neg_logjoint(const ConjugateCase& c, const Eigen::VectorXd& z) {
  const Eigen::VectorXd r = c.y_hat - c.f_lin * (c.a_g * z + c.b_g);
  const auto n_y = static_cast<double>(r.size());
  const auto n_z = static_cast<double>(z.size());
  return 0.5 * r.squaredNorm() / c.sigma2 + 0.5 * n_y * std::log(2 * std::numbers::pi * c.sigma2) +
         0.5 * z.squaredNorm() + 0.5 * n_z * kLog2Pi;
}

Tensor sample_cov(const Tensor& x) {
  const Tensor c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

double loss_of(const LatentPosteriorModel& m, const Tensor& z) { return nf_loss_value(m, z).loss; }

void check_moments(const flows::FlowModel& flow, const Eigen::VectorXd& mean, const Tensor& cov, double mean_abs,
                   double cov_rel) {
  const Tensor s = pushforward_samples(flow, 100000, 77);
  const Eigen::VectorXd m = s.colwise().mean().transpose();
  CHECK((m - mean).cwiseAbs().maxCoeff() < mean_abs);
  CHECK(testing::rel_err(sample_cov(s), cov) < cov_rel);
}

}  // namespace

TEST_CASE("identity flow: loss matches a plain Monte Carlo oracle") {
  const ConjugateCase c = samplers::random_conjugate_case(3, 10, 6, 0.7, 2);
  const LatentPosteriorModel m = conj_model(c, flows::FlowModel(3));
  Rng rng = make_rng(1, 0);
  const Tensor z = standard_normal(rng, 20000, 3);
  const LossValues v = nf_loss_value(m, z);
  const double se = std::sqrt((v.per_sample.array() - v.loss).square().sum() / (20000.0 - 1) / 20000.0);

  std::mt19937_64 mc(123);
  const int n = 1000000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double l = conj_neg_logjoint(c, testing::randn(mc, 3, 1));
    s += l;
    s2 += l * l;
  }
  const double mc_mean = s / n;
  const double mc_se = std::sqrt((s2 / n - mc_mean * mc_mean) / n);
  CHECK(std::abs(v.loss - mc_mean) < 3 * std::sqrt(se * se + mc_se * mc_se));
  CHECK(v.logdet_term == 0.0);
  CHECK(v.loglik_term + v.prior_term + v.logdet_term == doctest::Approx(v.loss).epsilon(1e-12));

  // the same expectation in closed form
  const Tensor mm = c.f_lin * c.a_g;
  const Eigen::VectorXd r = c.y_hat - c.f_lin * c.b_g;
  const double n_y = 6, n_z = 3;
  const double exact = 0.5 * (r.squaredNorm() + (mm.transpose() * mm).trace()) / c.sigma2 +
                       0.5 * n_y * std::log(2 * std::numbers::pi * c.sigma2) + 0.5 * n_z + 0.5 * n_z * kLog2Pi;
  CHECK(std::abs(mc_mean - exact) < 3 * mc_se);
}

TEST_CASE("loss is invariant under a permutation of the batch") {
  const ConjugateCase c = samplers::random_conjugate_case(3, 8, 5, 1.0, 3);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("planar:2,coupling", 3, 4));
  std::mt19937_64 rng(5);
  m.flow.actnorm_init(testing::randn(rng, 64, 3));
  m.flow.params().flat() += testing::randn(rng, static_cast<Eigen::Index>(m.flow.params().size()), 1, 0.2);
  const Tensor z = testing::randn(rng, 40, 3);
  std::vector<Eigen::Index> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor zp(40, 3);
  for (Eigen::Index i = 0; i < 40; ++i) zp.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
  CHECK(loss_of(m, zp) == doctest::Approx(loss_of(m, z)).epsilon(1e-13));
}

TEST_CASE("loss gradient matches finite differences on a 2-layer flow") {
  const ConjugateCase c = samplers::random_conjugate_case(3, 8, 5, 0.5, 6);
  for (const std::string spec : {"planar:2", "planar,permute", "actnorm,planar"}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec(spec, 3, seed));
      std::mt19937_64 rng(seed);
      m.flow.actnorm_init(testing::randn(rng, 64, 3));
      m.flow.params().flat() += testing::randn(rng, static_cast<Eigen::Index>(m.flow.params().size()), 1, 0.3);
      const Tensor z = testing::randn(rng, 8, 3);

      ad::Graph g;
      const auto p = g.bind_inputs(m.flow.params());
      const LossVars l = nf_loss(m, p, g.constant(z));
      const Eigen::VectorXd grad = g.gradient(l.loss, m.flow.params().names()).flat();

      Eigen::VectorXd fd(grad.size());
      const double h = 1e-6;
      for (Eigen::Index k = 0; k < grad.size(); ++k) {
        LatentPosteriorModel mp = m, mm = m;
        mp.flow.params().flat()(k) += h;
        mm.flow.params().flat()(k) -= h;
        fd(k) = (loss_of(mp, z) - loss_of(mm, z)) / (2 * h);
      }
      CHECK(testing::rel_err(grad, fd) < 1e-5);
    }
  }
}

TEST_CASE("loss gradient matches finite differences through a coupling layer") {
  const ConjugateCase c = samplers::random_conjugate_case(3, 8, 5, 0.5, 7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("coupling", 3, seed));
    std::mt19937_64 rng(seed);
    m.flow.actnorm_init(testing::randn(rng, 64, 3));
    m.flow.params().flat() += testing::randn(rng, static_cast<Eigen::Index>(m.flow.params().size()), 1, 0.3);
    const Tensor z = testing::randn(rng, 8, 3);
    ad::Graph g;
    const auto p = g.bind_inputs(m.flow.params());
    const Eigen::VectorXd grad = g.gradient(nf_loss(m, p, g.constant(z)).loss, m.flow.params().names()).flat();
    Eigen::VectorXd fd(grad.size());
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
      LatentPosteriorModel mp = m, mm = m;
      mp.flow.params().flat()(k) += h;
      mm.flow.params().flat()(k) -= h;
      fd(k) = (loss_of(mp, z) - loss_of(mm, z)) / (2 * h);
    }
    CHECK(testing::rel_err(grad, fd) < 1e-5);
  }
}

TEST_CASE("config validation") {
  const ConjugateCase c = samplers::random_conjugate_case(2, 4, 3, 1.0, 1);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("planar", 2, 1));
  VIConfig cfg;
  cfg.batch = 1;
  CHECK_THROWS_AS(train_flow(m, cfg, 1), ValidationError);
  cfg = VIConfig{};
  cfg.adam.lr = 0;
  CHECK_THROWS_AS(train_flow(m, cfg, 1), ValidationError);
  cfg = VIConfig{};
  cfg.lr_final_factor = 0;
  CHECK_THROWS_AS(train_flow(m, cfg, 1), ValidationError);
  cfg = VIConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_flow(m, cfg, 1), ValidationError);

  LatentPosteriorModel bad = conj_model(c, flows::FlowModel::from_spec("planar", 3, 1));
  CHECK_THROWS_AS(train_flow(bad, VIConfig{}, 1), ShapeError);
  CHECK_THROWS_AS(elbo_diagnostics(m, 0, 1), ValidationError);
  CHECK_THROWS_AS(elbo_diagnostics(m, 1, 1), ValidationError);
  CHECK_THROWS_AS(nf_loss_value(m, Tensor(0, 2)), ValidationError);
}

TEST_CASE("training: frozen generator, determinism, solve count, history file") {
  const ConjugateCase c = samplers::random_conjugate_case(3, 8, 5, 1.0, 8);
  const auto dir = testing::scratch_dir("vi_train");
  auto make = [&] { return conj_model(c, flows::FlowModel::from_spec("planar:2,coupling", 3, 2)); };
  LatentPosteriorModel a = make();
  const Eigen::VectorXd theta = a.generator->params().flat();
  const Eigen::VectorXd psi0 = a.flow.params().flat();
  VIConfig cfg;
  cfg.epochs = 60;
  cfg.patience = 0;
  cfg.history_path = dir / "h.csv";
  const VIResult ra = train_flow(a, cfg, 5);
  CHECK(a.generator->params().flat() == theta);
  CHECK_FALSE(a.flow.params().flat() == psi0);
  CHECK(ra.epochs_run == 60);
  CHECK(ra.forward_solves == 60u * 32u);
  CHECK(ra.history.size() == 60);
  CHECK(ra.history.back().forward_solves == 60u * 32u);
  CHECK(ra.history.front().forward_solves == 32u);

  LatentPosteriorModel b = make();
  cfg.history_path.clear();
  const VIResult rb = train_flow(b, cfg, 5);
  REQUIRE(rb.history.size() == ra.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) CHECK(rb.history[i].loss == ra.history[i].loss);
  CHECK(b.flow.params().flat() == a.flow.params().flat());

  LatentPosteriorModel d = make();
  const VIResult rd = train_flow(d, cfg, 6);
  CHECK(rd.history[0].loss != ra.history[0].loss);

  std::ifstream in(dir / "h.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,epoch,loss,loglik_term,prior_term,logdet_term,forward_solves");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 60);

  // a stride keeps every k-th record plus the last
  LatentPosteriorModel e = make();
  cfg.history_stride = 25;
  CHECK(train_flow(e, cfg, 5).history.size() == 4);
}

TEST_CASE("early stopping on a flat moving average") {
  const ConjugateCase c = samplers::random_conjugate_case(2, 4, 3, 1.0, 1);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel(2));
  VIConfig cfg;
  cfg.epochs = 5000;
  cfg.patience = 20;
  cfg.ma_window = 10;
  cfg.lr_final_factor = 1.0;
  const VIResult r = train_flow(m, cfg, 1);
  CHECK(r.stopped_early);
  CHECK(r.epochs_run < 5000);
  CHECK(r.epochs_run >= 10 + 20 - 1);
  CHECK(r.forward_solves == static_cast<std::uint64_t>(r.epochs_run) * 32u);

  // with annealing the plateau is followed by a tail of `patience` epochs
  cfg.lr_final_factor = 0.01;
  const VIResult t = train_flow(m, cfg, 1);
  CHECK(t.stopped_early);
  CHECK(t.epochs_run == r.epochs_run + 20);
  CHECK(t.history.back().epoch == t.epochs_run);
}

TEST_CASE("divergence aborts with the history written") {
  const ConjugateCase c = samplers::random_conjugate_case(2, 4, 3, 1.0, 1);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("planar:3", 2, 1));
  const auto dir = testing::scratch_dir("vi_diverge");
  VIConfig cfg;
  cfg.adam.lr = 1e200;
  cfg.epochs = 50;
  cfg.history_path = dir / "h.csv";
  CHECK_THROWS_AS(train_flow(m, cfg, 1), NumericalError);
  CHECK(std::filesystem::exists(cfg.history_path));
}

TEST_CASE("prior-only target: the trained flow pushes forward to the prior") {
  const ConjugateCase c = samplers::random_conjugate_case(3, 6, 4, 1.0, 1);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("planar:4,coupling:2", 3, 3));
  m.prior_only = true;
  std::mt19937_64 rng(1);
  // start away from the identity
  m.flow.actnorm_init(testing::randn(rng, 64, 3));
  m.flow.params().flat() += testing::randn(rng, static_cast<Eigen::Index>(m.flow.params().size()), 1, 0.3);
  VIConfig cfg;
  cfg.epochs = 2000;
  const VIResult r = train_flow(m, cfg, 2);
  CHECK(r.forward_solves == 0);
  check_moments(m.flow, Eigen::VectorXd::Zero(3), Tensor::Identity(3, 3), 0.02, 0.05);
}

TEST_CASE("identity flow on the prior-only target has zero KL") {
  const ConjugateCase c = samplers::random_conjugate_case(3, 6, 4, 1.0, 1);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel(3));
  m.prior_only = true;
  const ElboReport r = elbo_diagnostics(m, 1000, 3, 0.0);
  REQUIRE(r.kl.has_value());
  CHECK(std::abs(*r.kl) <= 1e-12);
  CHECK(r.elbo_se <= 1e-12);
  CHECK(r.loglik_term == 0.0);
}

TEST_CASE("zero-information measurement: posterior equals the prior") {
  ConjugateCase c = samplers::random_conjugate_case(3, 6, 4, 1.0, 4);
  c.f_lin.setZero();
  LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("planar:4,coupling:2", 3, 5));
  std::mt19937_64 rng(2);
  m.flow.actnorm_init(testing::randn(rng, 64, 3));
  m.flow.params().flat() += testing::randn(rng, static_cast<Eigen::Index>(m.flow.params().size()), 1, 0.3);
  VIConfig cfg;
  cfg.epochs = 2000;
  const VIResult r = train_flow(m, cfg, 3);
  CHECK(r.forward_solves == static_cast<std::uint64_t>(r.epochs_run) * 32u);
  check_moments(m.flow, Eigen::VectorXd::Zero(3), Tensor::Identity(3, 3), 0.02, 0.05);
}

TEST_CASE("gaussian KL closed form") {
  Eigen::VectorXd m0(2), m1(2);
  m0 << 0.3, -1.0;
  m1 << -0.2, 0.5;
  Tensor s0(2, 2), s1(2, 2);
  s0 << 1.0, 0.3, 0.3, 0.5;
  s1 << 2.0, -0.4, -0.4, 1.0;
  CHECK(gaussian_kl(m0, s0, m0, s0) == doctest::Approx(0.0).epsilon(1e-15));
  // 1-d check against the scalar formula
  Eigen::VectorXd a(1), b(1);
  a << 0.5;
  b << -1.0;
  const Tensor v0 = Tensor::Constant(1, 1, 0.7), v1 = Tensor::Constant(1, 1, 2.2);
  const double want = std::log(std::sqrt(2.2 / 0.7)) + (0.7 + 1.5 * 1.5) / (2 * 2.2) - 0.5;
  CHECK(gaussian_kl(a, v0, b, v1) == doctest::Approx(want).epsilon(1e-14));
  CHECK(gaussian_kl(m0, s0, m1, s1) > 0);
}

TEST_CASE("gaussian flow on the conjugate case: KL estimate vs closed form") {
  // actnorm alone gives q = N(-bias * e^ls, diag(e^{2 ls})), so KL(q || posterior) is analytic
  const ConjugateCase c = samplers::random_conjugate_case(3, 8, 6, 1.0, 9);
  const auto post = samplers::conjugate_posterior(c);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("actnorm", 3, 1));
  VIConfig cfg;
  cfg.epochs = 1500;
  train_flow(m, cfg, 4);
  const Eigen::ArrayXd ls = m.flow.params().get("f0.log_scale").transpose().array();
  const Eigen::ArrayXd bias = m.flow.params().get("f0.bias").transpose().array();
  const Eigen::VectorXd qm = (-bias * ls.exp()).matrix();
  const Tensor qc = Eigen::VectorXd((2 * ls).exp().matrix()).asDiagonal();
  const double kl = gaussian_kl(qm, qc, post.mean, post.cov);
  const ElboReport r = elbo_diagnostics(m, 20000, 8, post.log_evidence);
  REQUIRE(r.kl.has_value());
  CHECK(std::abs(*r.kl - kl) < 3 * r.elbo_se);
  CHECK(kl > 0);
}

TEST_CASE("conjugate case: coupling flow recovers the analytic posterior") {
  const ConjugateCase c = samplers::random_conjugate_case(4, 16, 12, 1.0, 10);
  const auto post = samplers::conjugate_posterior(c);
  LatentPosteriorModel m = conj_model(c, flows::FlowModel::from_spec("coupling:16", 4, 7));
  VIConfig cfg;
  cfg.epochs = 3000;
  const VIResult r = train_flow(m, cfg, 11);
  CHECK(r.forward_solves == static_cast<std::uint64_t>(r.epochs_run) * 32u);

  const Tensor s = pushforward_samples(m.flow, 100000, 5);
  const Eigen::VectorXd mean = s.colwise().mean().transpose();
  CHECK((mean - post.mean).norm() / post.mean.norm() < 0.02);
  CHECK(testing::rel_err(sample_cov(s), post.cov) < 0.05);

  const ElboReport e = elbo_diagnostics(m, 20000, 6, post.log_evidence);
  // reverse KL is non-negative: the achieved loss cannot beat -log p(y)
  CHECK(e.loss_mean >= -post.log_evidence - 3 * e.loss_se);
  CHECK(*e.kl >= -3 * e.elbo_se);
  CHECK(*e.kl < 0.05);
}
