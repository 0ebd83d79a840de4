#include "ganflow/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>

#include "ganflow/errors.hpp"
#include "ganflow/rng.hpp"
#include "ganflow/tensor_io.hpp"

namespace ganflow::pipeline {

namespace {

const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"", {"seed"}},
      {"problem",
       {"kind", "n_p", "sigma2", "noise_fraction", "kappa", "dt", "final_time", "n_angles", "mask_r",
        "center_fraction", "n_x", "n_y", "truth"}},
      {"prior",
       {"kind", "n_p", "n_data", "seed", "length", "corner_range", "far_corner_range", "edge_values",
        "perturbation_scales", "max_shift", "max_rotation"}},
      {"gan",
       {"generator", "n_z", "hidden", "critic_hidden", "lambda", "n_critic", "lr", "beta1", "beta2", "epochs",
        "batch", "patience", "ma_window"}},
      {"flow", {"spec"}},
      {"vi", {"epochs", "batch", "lr", "beta1", "beta2", "lr_final_factor", "patience", "ma_window", "history_stride"}},
      {"hmc", {"enabled", "n_leapfrog", "target_accept", "burn_in_fraction", "initial_step", "step_jitter", "n_samples", "thin"}},
      {"oracle", {"enabled", "n"}},
      {"posterior", {"n_s", "elbo_samples"}},
      {"output", {"dir", "pgm", "save_dataset", "log_every"}},
  };
  return keys;
}

void check_keys(const toml::Table& t, const std::string& section) {
  const auto& keys = allowed_keys().at(section);
  for (const auto& [k, v] : t.entries()) {
    if (!keys.count(k))
      throw ValidationError("unknown key '" + k + "' in " + (section.empty() ? "top level" : "[" + section + "]"));
  }
}

std::vector<Eigen::Index> to_widths(const std::vector<std::int64_t>& v) {
  std::vector<Eigen::Index> out;
  for (auto w : v) {
    if (w < 1) throw ValidationError("layer widths must be positive");
    out.push_back(static_cast<Eigen::Index>(w));
  }
  return out;
}

toml::Array to_array(const std::vector<Eigen::Index>& v) {
  toml::Array a;
  for (auto w : v) a.emplace_back(static_cast<std::int64_t>(w));
  return a;
}

std::size_t get_count(const toml::Table& t, const std::string& key, std::size_t fallback) {
  const std::int64_t v = t.get_or(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ValidationError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void log_line(const ExperimentConfig& cfg, const std::string& msg) {
  if (cfg.log_every > 0) std::cerr << "[ganflow] " << msg << '\n';
}

void write_row_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& row) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i].first;
  out << '\n';
  for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i].second;
  out << '\n';
}

double tail_mean_loss(const std::vector<vi::VIRecord>& h) {
  if (h.empty()) return std::nan("");
  const std::size_t n = std::min<std::size_t>(50, h.size());
  double s = 0;
  for (std::size_t i = h.size() - n; i < h.size(); ++i) s += h[i].loss;
  return s / static_cast<double>(n);
}

double rel_err(const Eigen::MatrixXd& est, const Eigen::MatrixXd& ref) { return (est - ref).norm() / ref.norm(); }

Eigen::MatrixXd sample_cov(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd m = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - m;
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

vi::VIConfig vi_run_config(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  vi::VIConfig v = cfg.vi;
  v.history_path = dir / "vi_history.csv";
  v.log_every = cfg.log_every;
  return v;
}

struct PhaseB {
  flows::FlowModel flow;
  vi::VIResult result;
  std::uint64_t solves = 0;
};

PhaseB run_phase_b(const ExperimentConfig& cfg, const std::shared_ptr<const gan::Generator>& generator,
                   const fwd::ForwardProblem& problem, const std::shared_ptr<fwd::ForwardModel>& model,
                   const std::filesystem::path& dir) {
  PhaseB b;
  vi::LatentPosteriorModel lpm{flows::FlowModel::from_spec(cfg.flow, generator->n_z(), derive_seed(cfg.seed, kFlow)),
                               generator, problem, false};
  model->reset_solve_count();
  b.result = vi::train_flow(lpm, vi_run_config(cfg, dir), derive_seed(cfg.seed, kVi));
  b.solves = model->solve_count();
  const auto expected = static_cast<std::uint64_t>(b.result.epochs_run) * static_cast<std::uint64_t>(cfg.vi.batch);
  if (b.solves != expected || b.result.forward_solves != expected)
    throw std::logic_error("phase B forward-solve count " + std::to_string(b.solves) + " != epochs x batch " +
                           std::to_string(expected));
  b.flow = std::move(lpm.flow);
  b.flow.save(dir / "flow.gfp");
  return b;
}

void push_hmc_common(std::vector<std::pair<std::string, double>>& m, const samplers::HmcResult& h,
                     std::uint64_t solves) {
  m.emplace_back("hmc_acceptance", h.acceptance_rate);
  m.emplace_back("hmc_step_size", h.step_size);
  m.emplace_back("hmc_forward_solves", static_cast<double>(solves));
}

samplers::HmcResult run_hmc(const ExperimentConfig& cfg, const std::shared_ptr<const gan::Generator>& generator,
                            const fwd::ForwardProblem& problem, const std::filesystem::path& dir) {
  samplers::HmcConfig hc = cfg.hmc.cfg;
  hc.seed = derive_seed(cfg.seed, kHmc);
  const auto f = samplers::latent_log_posterior(generator, problem);
  auto h = samplers::hmc_sample(f, Eigen::VectorXd::Zero(generator->n_z()), hc);
  std::filesystem::create_directories(dir / "hmc");
  samplers::write_samples_csv(dir / "hmc" / "samples.csv", h.samples);
  if (h.all_rejected) throw NumericalError("HMC rejected every proposal after burn-in");
  return h;
}

}  // namespace

// ---- configuration ----------------------------------------------------------------

ExperimentConfig ExperimentConfig::defaults(const std::string& kind) {
  ExperimentConfig c;
  c.problem.kind = kind;
  c.vi.batch = 32;
  c.vi.adam.lr = 0.002;
  if (kind == "heat") {
    c.problem.n_p = 32;
    c.prior.kind = "rect";
    c.gan.n_z = 5;
    c.gan.train.adam.lr = 2e-4;
    c.gan.train.epochs = 500;
    c.gan.train.batch = 64;
    c.flow = "planar:64";
    c.vi.epochs = 1000;
    c.n_posterior = 15000;
  } else if (kind == "radon") {
    c.problem.n_p = 32;
    c.problem.n_angles = 32;
    c.prior.kind = "phantom";
    c.gan.n_z = 60;
    c.gan.train.adam.lr = 1e-3;
    c.gan.train.epochs = 1000;
    c.gan.train.batch = 100;
    c.flow = "planar:256";
    c.vi.epochs = 15000;
    c.n_posterior = 30000;
  } else if (kind == "phase") {
    c.problem.n_p = 32;
    c.problem.mask_r = 4;
    c.problem.center_fraction = 0.08;
    c.problem.noise_fraction = 0.0004;
    c.prior.kind = "phantom";
    c.gan.n_z = 64;
    c.gan.train.adam.lr = 1e-3;
    c.gan.train.epochs = 300;
    c.gan.train.batch = 64;
    c.flow = "coupling:16";
    c.vi.adam.lr = 0.001;
    c.vi.epochs = 50000;
    c.n_posterior = 10000;
  } else if (kind == "conjugate") {
    c.problem.n_x = 64;
    c.problem.n_y = 32;
    c.gan.n_z = 4;
    c.flow = "coupling:8";
    c.vi.epochs = 3000;
    c.n_posterior = 20000;
  } else {
    throw ValidationError("unknown problem kind '" + kind + "' (heat, radon, phase, conjugate)");
  }
  if (kind != "conjugate") {
    c.gan.hidden = {128, 512};
    c.gan.critic_hidden = {512, 128};
    c.prior.n_p = c.problem.n_p;
    c.prior.seed = derive_seed(c.seed, kDataset);
  }
  c.hmc.cfg.n_samples = kind == "conjugate" ? 20000 : 15000;
  return c;
}

ExperimentConfig ExperimentConfig::from_toml(const toml::Document& doc) {
  check_keys(doc.root(), "");
  for (const auto& name : doc.section_names()) {
    if (!allowed_keys().count(name) || name.empty()) throw ValidationError("unknown section [" + name + "]");
    check_keys(doc.section(name), name);
  }
  const auto& pt = doc.section("problem");
  ExperimentConfig c = defaults(pt.get_or("kind", std::string("heat")));
  c.seed = static_cast<std::uint64_t>(doc.root().get_or("seed", std::int64_t{0}));

  auto& p = c.problem;
  p.n_p = pt.get_or("n_p", static_cast<std::int64_t>(p.n_p));
  p.sigma2 = pt.get_or("sigma2", p.sigma2);
  p.noise_fraction = pt.get_or("noise_fraction", p.noise_fraction);
  p.kappa = pt.get_or("kappa", p.kappa);
  p.dt = pt.get_or("dt", p.dt);
  p.final_time = pt.get_or("final_time", p.final_time);
  p.n_angles = pt.get_or("n_angles", static_cast<std::int64_t>(p.n_angles));
  p.mask_r = pt.get_or("mask_r", p.mask_r);
  p.center_fraction = pt.get_or("center_fraction", p.center_fraction);
  p.n_x = pt.get_or("n_x", static_cast<std::int64_t>(p.n_x));
  p.n_y = pt.get_or("n_y", static_cast<std::int64_t>(p.n_y));
  p.truth = pt.get_or("truth", p.truth);

  if (p.kind != "conjugate") {
    const auto& pr = doc.section("prior");
    toml::Table t;
    t.context = "[prior]";
    for (const auto& [k, v] : pr.entries()) t.set(k == "n_data" ? "count" : k, v);
    if (!t.contains("kind")) t.set("kind", c.prior.kind);
    if (!t.contains("n_p")) t.set("n_p", static_cast<std::int64_t>(p.n_p));
    if (!t.contains("count")) t.set("count", static_cast<std::int64_t>(c.prior.count));
    if (!t.contains("seed")) t.set("seed", static_cast<std::int64_t>(derive_seed(c.seed, kDataset)));
    c.prior = prior::DatasetSpec::from_toml(t);
  }

  const auto& g = doc.section("gan");
  c.gan.generator = g.get_or("generator", c.gan.generator);
  c.gan.n_z = g.get_or("n_z", static_cast<std::int64_t>(c.gan.n_z));
  if (g.contains("hidden")) c.gan.hidden = to_widths(g.get_ints("hidden"));
  if (g.contains("critic_hidden")) c.gan.critic_hidden = to_widths(g.get_ints("critic_hidden"));
  auto& gt = c.gan.train;
  gt.lambda = g.get_or("lambda", gt.lambda);
  gt.n_critic = g.get_or("n_critic", gt.n_critic);
  gt.adam.lr = g.get_or("lr", gt.adam.lr);
  gt.adam.beta1 = g.get_or("beta1", gt.adam.beta1);
  gt.adam.beta2 = g.get_or("beta2", gt.adam.beta2);
  gt.epochs = g.get_or("epochs", gt.epochs);
  gt.batch = g.get_or("batch", gt.batch);
  gt.patience = g.get_or("patience", gt.patience);
  gt.ma_window = g.get_or("ma_window", gt.ma_window);

  c.flow = doc.section("flow").get_or("spec", c.flow);

  const auto& v = doc.section("vi");
  c.vi.epochs = v.get_or("epochs", c.vi.epochs);
  c.vi.batch = v.get_or("batch", c.vi.batch);
  c.vi.adam.lr = v.get_or("lr", c.vi.adam.lr);
  c.vi.adam.beta1 = v.get_or("beta1", c.vi.adam.beta1);
  c.vi.adam.beta2 = v.get_or("beta2", c.vi.adam.beta2);
  c.vi.lr_final_factor = v.get_or("lr_final_factor", c.vi.lr_final_factor);
  c.vi.patience = v.get_or("patience", c.vi.patience);
  c.vi.ma_window = v.get_or("ma_window", c.vi.ma_window);
  c.vi.history_stride = v.get_or("history_stride", c.vi.history_stride);

  const auto& h = doc.section("hmc");
  c.hmc.enabled = h.get_or("enabled", c.hmc.enabled);
  c.hmc.cfg.n_leapfrog = h.get_or("n_leapfrog", c.hmc.cfg.n_leapfrog);
  c.hmc.cfg.target_accept = h.get_or("target_accept", c.hmc.cfg.target_accept);
  c.hmc.cfg.burn_in_fraction = h.get_or("burn_in_fraction", c.hmc.cfg.burn_in_fraction);
  c.hmc.cfg.initial_step = h.get_or("initial_step", c.hmc.cfg.initial_step);
  c.hmc.cfg.step_jitter = h.get_or("step_jitter", c.hmc.cfg.step_jitter);
  c.hmc.cfg.n_samples = get_count(h, "n_samples", c.hmc.cfg.n_samples);
  c.hmc.cfg.thin = h.get_or("thin", c.hmc.cfg.thin);

  const auto& o = doc.section("oracle");
  c.oracle.enabled = o.get_or("enabled", c.oracle.enabled);
  c.oracle.n = get_count(o, "n", c.oracle.n);

  const auto& ps = doc.section("posterior");
  c.n_posterior = get_count(ps, "n_s", c.n_posterior);
  c.elbo_samples = get_count(ps, "elbo_samples", c.elbo_samples);

  const auto& out = doc.section("output");
  c.out_dir = out.get_or("dir", c.out_dir.string());
  c.pgm = out.get_or("pgm", c.pgm);
  c.save_dataset = out.get_or("save_dataset", c.save_dataset);
  c.log_every = out.get_or("log_every", c.log_every);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return from_toml(toml::Document::load(path));
}

toml::Document ExperimentConfig::to_toml() const {
  toml::Document d;
  d.root().set("seed", static_cast<std::int64_t>(seed));
  auto& p = d.table("problem");
  p.set("kind", problem.kind);
  if (problem.kind == "conjugate") {
    p.set("n_x", static_cast<std::int64_t>(problem.n_x));
    p.set("n_y", static_cast<std::int64_t>(problem.n_y));
  } else {
    p.set("n_p", static_cast<std::int64_t>(problem.n_p));
  }
  p.set("sigma2", problem.sigma2);
  if (problem.kind == "heat") {
    p.set("kappa", problem.kappa);
    p.set("dt", problem.dt);
    p.set("final_time", problem.final_time);
  } else if (problem.kind == "radon") {
    p.set("n_angles", static_cast<std::int64_t>(problem.n_angles));
  } else if (problem.kind == "phase") {
    p.set("noise_fraction", problem.noise_fraction);
    p.set("mask_r", problem.mask_r);
    p.set("center_fraction", problem.center_fraction);
  }
  if (problem.kind != "conjugate") p.set("truth", problem.truth);

  if (problem.kind != "conjugate") {
    toml::Table t;
    prior.to_toml(t);
    auto& pr = d.table("prior");
    for (const auto& [k, v] : t.entries()) pr.set(k == "count" ? "n_data" : k, v);
  }

  auto& g = d.table("gan");
  if (problem.kind != "conjugate") {
    g.set("generator", gan.generator);
    g.set("n_z", static_cast<std::int64_t>(gan.n_z));
    g.set("hidden", to_array(gan.hidden));
    g.set("critic_hidden", to_array(gan.critic_hidden));
    g.set("lambda", gan.train.lambda);
    g.set("n_critic", gan.train.n_critic);
    g.set("lr", gan.train.adam.lr);
    g.set("beta1", gan.train.adam.beta1);
    g.set("beta2", gan.train.adam.beta2);
    g.set("epochs", gan.train.epochs);
    g.set("batch", gan.train.batch);
    g.set("patience", gan.train.patience);
    g.set("ma_window", gan.train.ma_window);
  } else {
    g.set("n_z", static_cast<std::int64_t>(gan.n_z));
  }

  d.table("flow").set("spec", flow);

  auto& v = d.table("vi");
  v.set("epochs", vi.epochs);
  v.set("batch", vi.batch);
  v.set("lr", vi.adam.lr);
  v.set("beta1", vi.adam.beta1);
  v.set("beta2", vi.adam.beta2);
  v.set("lr_final_factor", vi.lr_final_factor);
  v.set("patience", vi.patience);
  v.set("ma_window", vi.ma_window);
  v.set("history_stride", vi.history_stride);

  auto& h = d.table("hmc");
  h.set("enabled", hmc.enabled);
  h.set("n_leapfrog", hmc.cfg.n_leapfrog);
  h.set("target_accept", hmc.cfg.target_accept);
  h.set("burn_in_fraction", hmc.cfg.burn_in_fraction);
  h.set("initial_step", hmc.cfg.initial_step);
  h.set("step_jitter", hmc.cfg.step_jitter);
  h.set("n_samples", static_cast<std::int64_t>(hmc.cfg.n_samples));
  h.set("thin", hmc.cfg.thin);

  auto& o = d.table("oracle");
  o.set("enabled", oracle.enabled);
  o.set("n", static_cast<std::int64_t>(oracle.n));

  auto& ps = d.table("posterior");
  ps.set("n_s", static_cast<std::int64_t>(n_posterior));
  ps.set("elbo_samples", static_cast<std::int64_t>(elbo_samples));

  auto& out = d.table("output");
  out.set("dir", out_dir.string());
  out.set("pgm", pgm);
  out.set("save_dataset", save_dataset);
  out.set("log_every", log_every);
  return d;
}

void ExperimentConfig::validate() const {
  const auto& p = problem;
  const bool conj = p.kind == "conjugate";
  if (p.kind != "heat" && p.kind != "radon" && p.kind != "phase" && !conj)
    throw ValidationError("unknown problem kind '" + p.kind + "'");
  if (!(p.sigma2 > 0) || !std::isfinite(p.sigma2)) throw ValidationError("sigma2 must be positive");
  if (!(p.noise_fraction >= 0)) throw ValidationError("noise_fraction must be non-negative");
  if (conj) {
    if (p.n_x < 1 || p.n_y < 1) throw ValidationError("n_x and n_y must be positive");
    if (!gan.generator.empty()) throw ValidationError("the conjugate problem builds its own affine generator");
  } else {
    if (p.n_p < 2) throw ValidationError("n_p must be at least 2");
    if (p.kind == "radon" && p.n_angles < 1) throw ValidationError("n_angles must be positive");
    if (p.kind == "phase" && p.mask_r < 1) throw ValidationError("mask_r must be >= 1");
    if (p.kind == "phase" && !(p.center_fraction >= 0 && p.center_fraction <= 1))
      throw ValidationError("center_fraction must lie in [0, 1]");
    if (p.kind == "heat" && !(p.kappa > 0 && p.dt > 0 && p.final_time > 0))
      throw ValidationError("kappa, dt and final_time must be positive");
    if (!p.truth.empty() && !std::filesystem::exists(p.truth))
      throw ValidationError("truth file '" + p.truth + "' does not exist");
    if (!gan.generator.empty() && !std::filesystem::exists(gan.generator))
      throw ValidationError("generator file '" + gan.generator + "' does not exist");
    prior.validate();
    if (prior.n_p != p.n_p) throw ValidationError("[prior] n_p must equal [problem] n_p");
    gan.train.validate();
  }
  if (gan.n_z < 1) throw ValidationError("n_z must be positive");
  (void)flows::FlowModel::from_spec(flow, gan.n_z, 0);
  vi.validate();
  if (hmc.enabled) hmc.cfg.validate();
  if (oracle.enabled && oracle.n < 2) throw ValidationError("[oracle] n must be at least 2");
  if (n_posterior < 2) throw ValidationError("[posterior] n_s must be at least 2");
  if (elbo_samples < 2) throw ValidationError("[posterior] elbo_samples must be at least 2");
  if (log_every < 0) throw ValidationError("log_every must be non-negative");
}

// ---- runs -------------------------------------------------------------------------

double PipelineResult::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  throw ValidationError("no metric named '" + name + "'");
}

std::shared_ptr<fwd::ForwardModel> make_forward(const ProblemSettings& p, std::uint64_t seed) {
  if (p.kind == "heat") {
    fwd::HeatConfig h;
    h.n_p = p.n_p;
    h.kappa = p.kappa;
    h.dt = p.dt;
    h.final_time = p.final_time;
    return fwd::make_heat(h);
  }
  if (p.kind == "radon") {
    fwd::RadonConfig r;
    r.n_p = p.n_p;
    r.n_angles = p.n_angles;
    return fwd::make_radon(r);
  }
  if (p.kind == "phase")
    return std::make_shared<fwd::PhaseForward>(
        p.n_p, fwd::build_mask(p.n_p, p.mask_r, p.center_fraction, derive_seed(seed, kMask)));
  throw ValidationError("no standalone forward model for problem kind '" + p.kind + "'");
}

Instance make_instance(const ExperimentConfig& cfg) {
  const auto& p = cfg.problem;
  Instance inst;
  if (p.kind == "conjugate") {
    inst.conjugate =
        samplers::random_conjugate_case(cfg.gan.n_z, p.n_x, p.n_y, p.sigma2, derive_seed(cfg.seed, kConjugate));
    const auto& cc = *inst.conjugate;
    inst.generator = std::make_shared<const gan::Generator>(gan::Generator::affine(cc.a_g, cc.b_g));
    inst.model = std::make_shared<fwd::LinearForward>("linear", cc.f_lin);
    inst.problem = fwd::ForwardProblem{inst.model, fwd::NoiseModel{p.sigma2}, cc.y_hat.transpose()};
    inst.truth = (cc.a_g * samplers::conjugate_posterior(cc).mean + cc.b_g).transpose();
    return inst;
  }
  const Eigen::Index n_x = p.n_p * p.n_p;
  if (!cfg.gan.generator.empty()) {
    auto g = gan::Generator::load(cfg.gan.generator);
    if (g.n_x() != n_x) throw ShapeError("generator output size does not match n_p^2");
    inst.generator = std::make_shared<const gan::Generator>(std::move(g));
  }
  if (!p.truth.empty()) {
    const TensorFile f = read_gftensor(p.truth);
    if (f.data.size() != n_x) throw ShapeError("truth file is not an n_p x n_p field");
    inst.truth = f.data.rows() == p.n_p ? f.data : as_image(f.data, p.n_p);
  } else {
    prior::DatasetSpec ts = cfg.prior;
    ts.seed = derive_seed(cfg.seed, kTruth);
    inst.truth = prior::generate_sample(ts, 0);
  }
  inst.model = make_forward(p, cfg.seed);
  double sigma2 = p.sigma2;
  if (p.kind == "phase" && p.noise_fraction > 0) {
    const double sd = p.noise_fraction * std::abs(inst.truth.sum());
    if (!(sd > 0)) throw ValidationError("noise_fraction gives zero noise for an all-zero truth");
    sigma2 = sd * sd;
  }
  Rng noise_rng = make_rng(cfg.seed, kNoise);
  const Eigen::MatrixXd y_hat = fwd::simulate_measurement(*inst.model, as_row(inst.truth), sigma2, noise_rng);
  inst.problem = fwd::ForwardProblem{inst.model, fwd::NoiseModel{sigma2}, y_hat};
  return inst;
}

gan::Generator train_generator(const ExperimentConfig& cfg, const std::filesystem::path& dir, const Tensor* data) {
  const auto& p = cfg.problem;
  if (p.kind == "conjugate") throw ValidationError("the conjugate problem has no GAN prior to train");
  const Eigen::Index n_x = p.n_p * p.n_p;
  log_line(cfg, "phase A: GAN prior");
  std::filesystem::create_directories(dir);
  Tensor synth;
  if (!data) {
    synth = prior::generate_dataset(cfg.prior);
    if (cfg.save_dataset) prior::write_dataset(dir / "dataset", cfg.prior, synth);
    data = &synth;
  }
  if (data->cols() != n_x) throw ShapeError("training data rows are not n_p x n_p fields");
  const prior::Rescaler rs = prior::rescaler_for(p.kind);
  auto g = gan::Generator::dense(cfg.gan.n_z, n_x, cfg.gan.hidden, derive_seed(cfg.seed, kGeneratorInit));
  g.rescaler = rs;
  auto d = gan::Critic::dense(n_x, cfg.gan.critic_hidden, derive_seed(cfg.seed, kCriticInit));
  gan::GanTrainConfig gt = cfg.gan.train;
  gt.history_path = dir / "gan_history.csv";
  gt.log_every = cfg.log_every;
  gan::train_wgan(rs.rescale(*data), g, d, gt, derive_seed(cfg.seed, kGan));
  g.save(dir / "generator.gfp");
  return g;
}

samplers::ImportanceResult run_oracle(const ExperimentConfig& cfg, const Instance& inst, std::size_t n) {
  const std::uint64_t oseed = derive_seed(cfg.seed, kOracle);
  const auto loglik = [&](const Eigen::VectorXd& x) {
    return fwd::log_likelihood(inst.problem, Eigen::MatrixXd(x.transpose()))(0);
  };
  if (inst.conjugate) {
    const auto& cc = *inst.conjugate;
    return samplers::importance_oracle(
        [&](std::size_t i) -> Eigen::VectorXd {
          Rng rng = make_rng(oseed, i);
          return cc.a_g * standard_normal(rng, cc.a_g.cols(), 1) + cc.b_g;
        },
        loglik, n);
  }
  if (cfg.prior.kind == "rect") {
    prior::RectPriorConfig rc = cfg.prior.rect;
    rc.n_p = cfg.prior.n_p;
    return samplers::rect_importance_oracle(rc, inst.problem, n, oseed);
  }
  prior::DatasetSpec os = cfg.prior;
  os.seed = oseed;
  return samplers::importance_oracle(
      [&](std::size_t i) -> Eigen::VectorXd { return as_row(prior::generate_sample(os, i)).transpose(); }, loglik, n);
}

namespace {

PipelineResult run_conjugate(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  PipelineResult res;
  res.dir = dir;
  const auto& p = cfg.problem;
  const auto t0 = std::chrono::steady_clock::now();
  const Instance inst = make_instance(cfg);
  const samplers::ConjugateCase& cc = *inst.conjugate;
  const samplers::ConjugatePosterior post = samplers::conjugate_posterior(cc);
  const auto& generator = inst.generator;
  const auto& model = inst.model;
  const auto& problem = inst.problem;
  generator->save(dir / "generator.gfp");
  write_gftensor(dir / "forward_matrix.gft", cc.f_lin);
  write_gftensor(dir / "y_hat.gft", cc.y_hat.transpose());
  std::filesystem::create_directories(dir / "analytic");
  write_gftensor(dir / "analytic" / "latent_mean.gft", post.mean.transpose());
  write_gftensor(dir / "analytic" / "latent_cov.gft", post.cov);
  res.truth = inst.truth;
  write_gftensor(dir / "analytic" / "mean.gft", res.truth);

  log_line(cfg, "phase B: flow VI");
  const auto tb = std::chrono::steady_clock::now();
  PhaseB b = run_phase_b(cfg, generator, problem, model, dir);
  res.vi = b.result;
  res.phase_b_solves = b.solves;
  const double phase_b_s = seconds_since(tb);

  log_line(cfg, "phase C: posterior sampling");
  const auto tc = std::chrono::steady_clock::now();
  const std::uint64_t c0 = model->solve_count();
  res.posterior = stats::sample_posterior(*generator, b.flow, cfg.n_posterior, derive_seed(cfg.seed, kPosterior));
  const Eigen::MatrixXd zq = vi::pushforward_samples(b.flow, cfg.n_posterior, derive_seed(cfg.seed, kPosterior));
  res.phase_c_solves = model->solve_count() - c0;
  if (res.phase_c_solves != 0) throw std::logic_error("phase C performed forward solves");
  std::filesystem::create_directories(dir / "posterior");
  write_gftensor(dir / "posterior" / "mean.gft", res.posterior.mean_field.transpose());
  write_gftensor(dir / "posterior" / "std.gft", res.posterior.std_field.transpose());
  const Eigen::VectorXd zm = zq.colwise().mean().transpose();
  const Eigen::MatrixXd zc = sample_cov(zq);
  write_gftensor(dir / "posterior" / "latent_mean.gft", zm.transpose());
  write_gftensor(dir / "posterior" / "latent_cov.gft", zc);
  const double phase_c_s = seconds_since(tc);

  vi::LatentPosteriorModel lpm{b.flow, generator, problem, false};
  const vi::ElboReport er = vi::elbo_diagnostics(lpm, cfg.elbo_samples, derive_seed(cfg.seed, kElbo), post.log_evidence);

  auto& m = res.metrics;
  m.emplace_back("sigma2", p.sigma2);
  m.emplace_back("n_z", static_cast<double>(cfg.gan.n_z));
  m.emplace_back("vi_epochs", res.vi.epochs_run);
  m.emplace_back("vi_stopped_early", res.vi.stopped_early ? 1.0 : 0.0);
  m.emplace_back("forward_solves_vi", static_cast<double>(res.phase_b_solves));
  m.emplace_back("forward_solves_sampling", static_cast<double>(res.phase_c_solves));
  m.emplace_back("final_loss", tail_mean_loss(res.vi.history));
  m.emplace_back("elbo", er.elbo);
  m.emplace_back("elbo_se", er.elbo_se);
  m.emplace_back("log_evidence", post.log_evidence);
  m.emplace_back("kl_elbo", er.kl.value_or(std::nan("")));
  m.emplace_back("kl_gaussian", vi::gaussian_kl(zm, zc, post.mean, post.cov));
  m.emplace_back("mean_rel_err", rel_err(zm, post.mean));
  m.emplace_back("cov_rel_err", rel_err(zc, post.cov));
  m.emplace_back("rmse_mean", stats::rmse(res.posterior.mean_field.transpose(), res.truth));
  m.emplace_back("mean_std", res.posterior.std_field.mean());

  double hmc_s = 0;
  if (cfg.hmc.enabled) {
    log_line(cfg, "HMC baseline");
    const auto th = std::chrono::steady_clock::now();
    model->reset_solve_count();
    const samplers::HmcResult h = run_hmc(cfg, generator, problem, dir);
    const std::uint64_t solves = model->solve_count();
    res.hmc = stats::summarize(generator->forward_data(h.samples));
    write_gftensor(dir / "hmc" / "mean.gft", res.hmc->mean_field.transpose());
    write_gftensor(dir / "hmc" / "std.gft", res.hmc->std_field.transpose());
    m.emplace_back("hmc_mean_rel_err", rel_err(h.samples.colwise().mean().transpose(), post.mean));
    m.emplace_back("hmc_cov_rel_err", rel_err(sample_cov(h.samples), post.cov));
    push_hmc_common(m, h, solves);
    hmc_s = seconds_since(th);
  }

  write_row_csv(dir / "summary.csv", m);
  write_row_csv(dir / "timings.csv", {{"total_seconds", seconds_since(t0)},
                                      {"phase_b_seconds", phase_b_s},
                                      {"phase_c_seconds", phase_c_s},
                                      {"hmc_seconds", hmc_s}});
  return res;
}

PipelineResult run_gan_problem(const ExperimentConfig& cfg_in, const std::filesystem::path& dir) {
  ExperimentConfig cfg = cfg_in;
  PipelineResult res;
  res.dir = dir;
  const auto& p = cfg.problem;
  const auto t0 = std::chrono::steady_clock::now();
  const double range = stats::default_dynamic_range(p.kind);
  const bool images = p.n_p >= stats::SsimConfig{}.window;

  const Instance inst = make_instance(cfg);
  const auto& model = inst.model;
  const auto& problem = inst.problem;
  const Eigen::MatrixXd& truth = inst.truth;
  const double sigma2 = problem.noise.sigma2;

  // Phase A
  std::shared_ptr<const gan::Generator> generator = inst.generator;
  double phase_a_s = 0;
  if (generator) {
    cfg.gan.n_z = generator->n_z();
    cfg.gan.hidden = generator->hidden();
    res.generator_reused = true;
    cfg.to_toml().save(dir / "config.resolved.toml");
    generator->save(dir / "generator.gfp");
  } else {
    const auto ta = std::chrono::steady_clock::now();
    generator = std::make_shared<const gan::Generator>(train_generator(cfg, dir));
    phase_a_s = seconds_since(ta);
  }

  write_gftensor(dir / "truth.gft", truth);
  if (cfg.pgm) write_pgm(dir / "truth.pgm", truth);
  res.truth = as_row(truth);
  if (p.kind == "phase")
    write_gftensor(dir / "mask.gft", static_cast<const fwd::PhaseForward*>(model.get())->mask().cast<double>());
  write_gftensor(dir / "y_hat.gft", problem.y_hat);

  // Phase B
  log_line(cfg, "phase B: flow VI");
  const auto tb = std::chrono::steady_clock::now();
  PhaseB b = run_phase_b(cfg, generator, problem, model, dir);
  res.vi = b.result;
  res.phase_b_solves = b.solves;
  const double phase_b_s = seconds_since(tb);

  // Phase C
  log_line(cfg, "phase C: posterior sampling");
  const auto tc = std::chrono::steady_clock::now();
  const std::uint64_t c0 = model->solve_count();
  res.posterior = stats::sample_posterior(*generator, b.flow, cfg.n_posterior, derive_seed(cfg.seed, kPosterior));
  const stats::PosteriorEnsemble prior_e = stats::sample_posterior(
      *generator, flows::FlowModel(generator->n_z()), cfg.n_posterior, derive_seed(cfg.seed, kPriorBaseline));
  res.phase_c_solves = model->solve_count() - c0;
  if (res.phase_c_solves != 0) throw std::logic_error("phase C performed forward solves");
  const std::optional<Eigen::MatrixXd> truth_img = images ? std::optional<Eigen::MatrixXd>(truth) : std::nullopt;
  stats::write_ensemble(dir / "posterior", res.posterior, p.n_p, truth_img, range, cfg.seed, cfg.pgm);
  stats::write_ensemble(dir / "prior", prior_e, p.n_p, truth_img, range, cfg.seed, cfg.pgm);
  const double phase_c_s = seconds_since(tc);

  vi::LatentPosteriorModel lpm{b.flow, generator, problem, false};
  const vi::ElboReport er = vi::elbo_diagnostics(lpm, cfg.elbo_samples, derive_seed(cfg.seed, kElbo));

  const auto img = [&](const Eigen::VectorXd& v) { return as_image(v.transpose(), p.n_p); };
  auto& m = res.metrics;
  m.emplace_back("sigma2", sigma2);
  m.emplace_back("n_z", static_cast<double>(generator->n_z()));
  m.emplace_back("vi_epochs", res.vi.epochs_run);
  m.emplace_back("vi_stopped_early", res.vi.stopped_early ? 1.0 : 0.0);
  m.emplace_back("forward_solves_vi", static_cast<double>(res.phase_b_solves));
  m.emplace_back("forward_solves_sampling", static_cast<double>(res.phase_c_solves));
  m.emplace_back("final_loss", tail_mean_loss(res.vi.history));
  m.emplace_back("elbo", er.elbo);
  m.emplace_back("elbo_se", er.elbo_se);
  m.emplace_back("rmse_mean", stats::rmse(img(res.posterior.mean_field), truth));
  if (images) m.emplace_back("ssim_mean", stats::ssim(img(res.posterior.mean_field), truth, range));
  m.emplace_back("mean_std", res.posterior.std_field.mean());
  m.emplace_back("prior_rmse_mean", stats::rmse(img(prior_e.mean_field), truth));
  if (images) m.emplace_back("prior_ssim_mean", stats::ssim(img(prior_e.mean_field), truth, range));

  double hmc_s = 0;
  if (cfg.hmc.enabled) {
    log_line(cfg, "HMC baseline");
    const auto th = std::chrono::steady_clock::now();
    model->reset_solve_count();
    const samplers::HmcResult h = run_hmc(cfg, generator, problem, dir);
    const std::uint64_t solves = model->solve_count();
    res.hmc = stats::summarize(generator->forward_data(h.samples));
    stats::write_ensemble(dir / "hmc", *res.hmc, p.n_p, truth_img, range, cfg.seed, cfg.pgm);
    m.emplace_back("hmc_rmse_mean", stats::rmse(img(res.hmc->mean_field), truth));
    if (images) m.emplace_back("hmc_ssim_mean", stats::ssim(img(res.hmc->mean_field), truth, range));
    m.emplace_back("hmc_mean_std", res.hmc->std_field.mean());
    push_hmc_common(m, h, solves);
    hmc_s = seconds_since(th);
  }

  double oracle_s = 0;
  if (cfg.oracle.enabled) {
    log_line(cfg, "importance-sampling oracle");
    const auto to = std::chrono::steady_clock::now();
    samplers::ImportanceResult o = run_oracle(cfg, inst, cfg.oracle.n);
    const Eigen::MatrixXd om = img(o.mean), osd = img(o.std);
    std::filesystem::create_directories(dir / "oracle");
    write_gftensor(dir / "oracle" / "mean.gft", om);
    write_gftensor(dir / "oracle" / "std.gft", osd);
    write_gftensor(dir / "oracle" / "mean_se.gft", img(o.mean_se));
    if (cfg.pgm) {
      write_pgm(dir / "oracle" / "mean.pgm", om);
      write_pgm(dir / "oracle" / "std.pgm", osd);
    }
    m.emplace_back("oracle_ess", o.ess);
    m.emplace_back("oracle_unreliable", o.unreliable ? 1.0 : 0.0);
    m.emplace_back("oracle_log_evidence", o.log_evidence);
    m.emplace_back("oracle_rmse_mean", stats::rmse(om, truth));
    m.emplace_back("rmse_mean_vs_oracle", stats::rmse(img(res.posterior.mean_field), om));
    m.emplace_back("rmse_std_vs_oracle", stats::rmse(img(res.posterior.std_field), osd));
    if (res.hmc) {
      m.emplace_back("hmc_rmse_mean_vs_oracle", stats::rmse(img(res.hmc->mean_field), om));
      m.emplace_back("hmc_rmse_std_vs_oracle", stats::rmse(img(res.hmc->std_field), osd));
    }
    res.oracle = std::move(o);
    oracle_s = seconds_since(to);
  }

  write_row_csv(dir / "summary.csv", m);
  write_row_csv(dir / "timings.csv", {{"total_seconds", seconds_since(t0)},
                                      {"phase_a_seconds", phase_a_s},
                                      {"phase_b_seconds", phase_b_s},
                                      {"phase_c_seconds", phase_c_s},
                                      {"hmc_seconds", hmc_s},
                                      {"oracle_seconds", oracle_s}});
  return res;
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path dir = cfg.out_dir;
  std::filesystem::create_directories(dir);
  cfg.to_toml().save(dir / "config.resolved.toml");
  return cfg.problem.kind == "conjugate" ? run_conjugate(cfg, dir) : run_gan_problem(cfg, dir);
}

std::vector<PipelineResult> run_sweep(const ExperimentConfig& cfg, const std::vector<Eigen::Index>& n_z_values) {
  if (n_z_values.empty()) throw ValidationError("sweep needs at least one n_z");
  if (!cfg.gan.generator.empty()) throw ValidationError("a sweep trains its own generators; drop [gan] generator");
  std::vector<PipelineResult> out;
  for (Eigen::Index k : n_z_values) {
    ExperimentConfig c = cfg;
    c.gan.n_z = k;
    c.out_dir = cfg.out_dir / ("nz_" + std::to_string(k));
    out.push_back(run_pipeline(c));
  }
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir / "sweep.csv");
  if (!csv) throw ValidationError("cannot write sweep.csv");
  csv.precision(17);
  csv << "n_z";
  for (const auto& [name, v] : out.front().metrics)
    if (name != "n_z") csv << ',' << name;
  csv << '\n';
  for (std::size_t i = 0; i < out.size(); ++i) {
    csv << n_z_values[i];
    for (const auto& [name, v] : out.front().metrics)
      if (name != "n_z") csv << ',' << out[i].metric(name);
    csv << '\n';
  }
  return out;
}

}  // namespace ganflow::pipeline
