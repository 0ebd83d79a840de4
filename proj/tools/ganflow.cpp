// ganflow command-line driver. Exit codes: 0 ok, 1 usage or validation
// error, 2 numerical abort.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ganflow/errors.hpp"
#include "ganflow/pipeline.hpp"
#include "ganflow/tensor_io.hpp"

using namespace ganflow;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string generator;
  int log_every = -1;
};

pipeline::ExperimentConfig load_config(const Common& c, const std::string& fallback_kind = "") {
  pipeline::ExperimentConfig cfg;
  if (!c.config.empty())
    cfg = pipeline::ExperimentConfig::load(c.config);
  else if (!fallback_kind.empty())
    cfg = pipeline::ExperimentConfig::defaults(fallback_kind);
  else
    throw ValidationError("--config is required");
  if (!c.out.empty()) cfg.out_dir = c.out;
  if (!c.generator.empty()) cfg.gan.generator = c.generator;
  if (c.log_every >= 0) cfg.log_every = c.log_every;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool with_generator) {
  cmd->add_option("--config", c.config, "Experiment TOML")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory (overrides [output] dir)");
  if (with_generator)
    cmd->add_option("--generator", c.generator, "Trained generator (.gfp); skips GAN training")
        ->check(CLI::ExistingFile);
  cmd->add_option("--log-every", c.log_every, "Progress line every n epochs (0 silent)");
}

void print_metrics(const std::vector<std::pair<std::string, double>>& m) {
  std::cout.precision(6);
  for (const auto& [k, v] : m) std::cout << k << " = " << v << '\n';
}

void write_csv(const fs::path& path, const std::vector<std::pair<std::string, double>>& row) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i].first;
  out << '\n';
  for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i].second;
  out << '\n';
}

Eigen::Index square_side(Eigen::Index n) {
  const auto s = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(n))));
  return s * s == n ? s : 0;
}

/// Rows of fields from a GFTENSOR: an n_p x n_p image, a rank-3 stack
/// (n, n_p, n_p) or an n x n_x matrix.
Eigen::MatrixXd read_fields(const fs::path& path) {
  const TensorFile f = read_gftensor(path);
  if (f.shape.size() == 2 && f.shape[0] == f.shape[1] && f.shape[0] > 1) return as_row(f.data);
  return f.data;
}

// ---- subcommands ------------------------------------------------------------------

int cmd_gen_prior(const std::string& kind, std::size_t n, Eigen::Index n_p, std::uint64_t seed,
                  const std::string& out) {
  prior::DatasetSpec spec;
  spec.kind = kind;
  spec.n_p = n_p > 0 ? n_p : (kind == "rect" ? 16 : 32);
  spec.rect.n_p = spec.phantom.n_p = spec.n_p;
  spec.count = n;
  spec.seed = seed;
  const auto data = prior::generate_dataset(spec);
  prior::write_dataset(out, spec, data);
  std::cout << "wrote " << n << " samples to " << out << '\n';
  return 0;
}

int cmd_train_gan(const Common& c, const std::string& data_dir) {
  const auto cfg = load_config(c);
  fs::create_directories(cfg.out_dir);
  cfg.to_toml().save(cfg.out_dir / "config.resolved.toml");
  std::optional<prior::Dataset> ds;
  if (!data_dir.empty()) {
    ds = prior::read_dataset(data_dir);
    if (ds->spec.n_p != cfg.problem.n_p) throw ValidationError("dataset n_p does not match [problem] n_p");
  }
  const auto g = pipeline::train_generator(cfg, cfg.out_dir, ds ? &ds->samples : nullptr);
  std::cout << "generator (n_z " << g.n_z() << ", n_x " << g.n_x() << ") written to "
            << (cfg.out_dir / "generator.gfp").string() << '\n';
  return 0;
}

int cmd_run(const Common& c, bool baselines) {
  auto cfg = load_config(c);
  if (!baselines) {
    cfg.hmc.enabled = false;
    cfg.oracle.enabled = false;
  }
  const auto r = pipeline::run_pipeline(cfg);
  print_metrics(r.metrics);
  std::cout << "artifacts in " << r.dir.string() << '\n';
  return 0;
}

int cmd_sample(const std::string& gen_path, const std::string& flow_path, std::size_t n, std::uint64_t seed,
               const std::string& truth, double range, const std::string& out) {
  const auto g = gan::Generator::load(gen_path);
  const auto flow = flows::FlowModel::load(flow_path);
  const auto e = stats::sample_posterior(g, flow, n, seed);
  const Eigen::Index n_p = square_side(g.n_x());
  if (n_p >= 2) {
    std::optional<Eigen::MatrixXd> t;
    if (!truth.empty()) t = as_image(read_fields(truth), n_p);
    if (t && n_p < stats::SsimConfig{}.window) {
      stats::write_ensemble(out, e, n_p, std::nullopt, range, seed);
      write_csv(fs::path(out) / "metrics.csv",
                {{"rmse", stats::rmse(as_image(e.mean_field.transpose(), n_p), *t)}});
    } else if (const auto r = stats::write_ensemble(out, e, n_p, t, range, seed)) {
      std::cout << "rmse = " << r->rmse << "\nssim = " << r->ssim << '\n';
    }
  } else {
    fs::create_directories(out);
    write_gftensor(fs::path(out) / "mean.gft", e.mean_field.transpose());
    write_gftensor(fs::path(out) / "std.gft", e.std_field.transpose());
  }
  std::cout << "wrote " << n << "-sample ensemble summary to " << out << '\n';
  return 0;
}

int cmd_hmc(const Common& c, std::size_t n_samples) {
  auto cfg = load_config(c);
  if (n_samples > 0) cfg.hmc.cfg.n_samples = n_samples;
  cfg.hmc.cfg.validate();
  const auto inst = pipeline::make_instance(cfg);
  if (!inst.generator) throw ValidationError("hmc needs a generator (--generator or [gan] generator)");
  samplers::HmcConfig hc = cfg.hmc.cfg;
  hc.seed = derive_seed(cfg.seed, pipeline::kHmc);
  inst.model->reset_solve_count();
  const auto f = samplers::latent_log_posterior(inst.generator, inst.problem);
  const auto h = samplers::hmc_sample(f, Eigen::VectorXd::Zero(inst.generator->n_z()), hc);
  const fs::path dir = cfg.out_dir / "hmc";
  fs::create_directories(dir);
  samplers::write_samples_csv(dir / "samples.csv", h.samples);
  if (h.all_rejected) throw NumericalError("HMC rejected every proposal after burn-in");
  const auto e = stats::summarize(inst.generator->forward_data(h.samples));
  std::vector<std::pair<std::string, double>> m{{"acceptance", h.acceptance_rate},
                                                {"burn_in_acceptance", h.burn_in_acceptance},
                                                {"step_size", h.step_size},
                                                {"n_burn_in", static_cast<double>(h.n_burn_in)},
                                                {"n_samples", static_cast<double>(h.samples.rows())},
                                                {"gradient_evaluations", static_cast<double>(h.gradient_evaluations)},
                                                {"forward_solves", static_cast<double>(inst.model->solve_count())}};
  if (inst.conjugate) {
    write_gftensor(dir / "mean.gft", e.mean_field.transpose());
    write_gftensor(dir / "std.gft", e.std_field.transpose());
    const auto post = samplers::conjugate_posterior(*inst.conjugate);
    const Eigen::VectorXd zm = h.samples.colwise().mean().transpose();
    const Eigen::MatrixXd zc = (h.samples.rowwise() - zm.transpose()).transpose() *
                               (h.samples.rowwise() - zm.transpose()) / static_cast<double>(h.samples.rows() - 1);
    m.emplace_back("mean_rel_err", (zm - post.mean).norm() / post.mean.norm());
    m.emplace_back("cov_rel_err", (zc - post.cov).norm() / post.cov.norm());
  } else {
    const Eigen::Index n_p = cfg.problem.n_p;
    const bool images = n_p >= stats::SsimConfig{}.window;
    stats::write_ensemble(dir, e, n_p, images ? std::optional<Eigen::MatrixXd>(inst.truth) : std::nullopt,
                          stats::default_dynamic_range(cfg.problem.kind), cfg.seed, cfg.pgm);
    m.emplace_back("rmse_mean", stats::rmse(as_image(e.mean_field.transpose(), n_p), inst.truth));
  }
  write_csv(dir / "summary.csv", m);
  print_metrics(m);
  return 0;
}

int cmd_oracle(const Common& c, std::size_t n) {
  auto cfg = load_config(c);
  if (n > 0) cfg.oracle.n = n;
  if (cfg.oracle.n < 2) throw ValidationError("--n must be at least 2");
  const auto inst = pipeline::make_instance(cfg);
  const auto o = pipeline::run_oracle(cfg, inst, cfg.oracle.n);
  const fs::path dir = cfg.out_dir / "oracle";
  fs::create_directories(dir);
  const bool conj = inst.conjugate.has_value();
  const auto shape = [&](const Eigen::VectorXd& v) -> Eigen::MatrixXd {
    return conj ? Eigen::MatrixXd(v.transpose()) : as_image(v.transpose(), cfg.problem.n_p);
  };
  write_gftensor(dir / "mean.gft", shape(o.mean));
  write_gftensor(dir / "std.gft", shape(o.std));
  write_gftensor(dir / "mean_se.gft", shape(o.mean_se));
  const Eigen::MatrixXd ref = conj ? Eigen::MatrixXd(inst.truth) : inst.truth;
  std::vector<std::pair<std::string, double>> m{{"n", static_cast<double>(o.n)},
                                                {"ess", o.ess},
                                                {"unreliable", o.unreliable ? 1.0 : 0.0},
                                                {"log_evidence", o.log_evidence},
                                                {"rmse_mean", stats::rmse(shape(o.mean), ref)}};
  if (conj) m.emplace_back("log_evidence_exact", samplers::conjugate_posterior(*inst.conjugate).log_evidence);
  write_csv(dir / "summary.csv", m);
  print_metrics(m);
  if (o.unreliable) std::cerr << "warning: effective sample size " << o.ess << " < 50; estimate unreliable\n";
  return 0;
}

int cmd_conjugate_check(const Common& c, Eigen::Index n_z, bool hmc) {
  auto cfg = load_config(c, "conjugate");
  if (cfg.problem.kind != "conjugate") throw ValidationError("conjugate-check needs [problem] kind = \"conjugate\"");
  if (n_z > 0) cfg.gan.n_z = n_z;
  if (hmc) cfg.hmc.enabled = true;
  cfg.validate();
  const auto r = pipeline::run_pipeline(cfg);
  print_metrics(r.metrics);
  const auto verdict = [&](const std::string& name, double tol) {
    const double v = r.metric(name);
    std::cout << (v <= tol ? "PASS " : "FAIL ") << name << ' ' << v << " (tol " << tol << ")\n";
  };
  verdict("mean_rel_err", 0.02);
  verdict("cov_rel_err", 0.05);
  if (cfg.hmc.enabled) {
    verdict("hmc_mean_rel_err", 0.02);
    verdict("hmc_cov_rel_err", 0.05);
  }
  return 0;
}

struct ForwardOpts {
  std::string config, kind, input, out;
  std::uint64_t seed = 0;
  double sigma2 = 0;
  Eigen::Index n_angles = 0;
  int mask_r = 0;
  double center_fraction = -1;
};

int cmd_forward(const ForwardOpts& o) {
  pipeline::ProblemSettings p;
  std::uint64_t seed = o.seed;
  if (!o.config.empty()) {
    const auto cfg = pipeline::ExperimentConfig::load(o.config);
    p = cfg.problem;
    seed = cfg.seed;
  } else {
    const std::string kind = o.kind.empty() ? "heat" : o.kind;
    p = pipeline::ExperimentConfig::defaults(kind).problem;
  }
  if (!o.kind.empty()) p.kind = o.kind;
  if (o.n_angles > 0) p.n_angles = o.n_angles;
  if (o.mask_r > 0) p.mask_r = o.mask_r;
  if (o.center_fraction >= 0) p.center_fraction = o.center_fraction;
  const Eigen::MatrixXd x = read_fields(o.input);
  p.n_p = square_side(x.cols());
  if (p.n_p < 2) throw ShapeError("input fields are not square images");
  const auto model = pipeline::make_forward(p, seed);
  Eigen::MatrixXd y;
  if (o.sigma2 > 0) {
    Rng rng = make_rng(seed, pipeline::kNoise);
    y = fwd::simulate_measurement(*model, x, o.sigma2, rng);
  } else {
    y = model->apply(x);
  }
  write_gftensor(o.out, y);
  std::cout << model->kind() << ": " << x.rows() << " x " << x.cols() << " -> " << y.rows() << " x " << y.cols()
            << " written to " << o.out << '\n';
  return 0;
}

int cmd_metrics(const std::string& a_path, const std::string& b_path, double range, const std::string& out) {
  const TensorFile a = read_gftensor(a_path), b = read_gftensor(b_path);
  if (a.shape != b.shape) throw ShapeError("metrics: the two tensors have different shapes");
  std::vector<std::pair<std::string, double>> m{{"rmse", stats::rmse(a.data, b.data)}};
  if (a.data.rows() >= stats::SsimConfig{}.window && a.data.cols() >= stats::SsimConfig{}.window)
    m.emplace_back("ssim", stats::ssim(a.data, b.data, range));
  else
    std::cerr << "note: images smaller than the SSIM window; ssim omitted\n";
  std::cout.precision(17);
  for (std::size_t i = 0; i < m.size(); ++i) std::cout << (i ? "," : "") << m[i].first;
  std::cout << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) std::cout << (i ? "," : "") << m[i].second;
  std::cout << '\n';
  if (!out.empty()) write_csv(out, m);
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<Eigen::Index>& nz) {
  const auto cfg = load_config(c);
  const auto rs = pipeline::run_sweep(cfg, nz);
  std::cout << "sweep over " << rs.size() << " latent dimensions written to "
            << (cfg.out_dir / "sweep.csv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN prior + latent normalizing-flow posterior inference"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker cap (same as GANFLOW_THREADS)");

  std::function<int()> action;

  auto* gen = app.add_subcommand("gen-prior", "Synthesize a prior dataset");
  std::string gp_kind = "rect", gp_out;
  std::size_t gp_n = 2000;
  Eigen::Index gp_np = 0;
  std::uint64_t gp_seed = 0;
  gen->add_option("--kind", gp_kind, "rect | phantom")->check(CLI::IsMember({"rect", "phantom"}));
  gen->add_option("--n", gp_n, "Number of samples");
  gen->add_option("--n-p", gp_np, "Image side (default 16 rect, 32 phantom)");
  gen->add_option("--seed", gp_seed, "Seed");
  gen->add_option("--out", gp_out, "Output directory")->required();
  gen->callback([&] { action = [&] { return cmd_gen_prior(gp_kind, gp_n, gp_np, gp_seed, gp_out); }; });

  Common tg_c;
  std::string tg_data;
  auto* tg = app.add_subcommand("train-gan", "Phase A: train the WGAN-GP prior");
  add_common(tg, tg_c, false);
  tg->add_option("--data", tg_data, "Dataset directory from gen-prior (default: synthesize from [prior])")
      ->check(CLI::ExistingDirectory);
  tg->callback([&] { action = [&] { return cmd_train_gan(tg_c, tg_data); }; });

  Common tf_c;
  auto* tf = app.add_subcommand("train-flow", "Phases B and C on a trained generator");
  add_common(tf, tf_c, true);
  tf->callback([&] { action = [&] { return cmd_run(tf_c, false); }; });

  Common run_c;
  auto* run = app.add_subcommand("run", "Full pipeline with the configured baselines");
  add_common(run, run_c, true);
  run->callback([&] { action = [&] { return cmd_run(run_c, true); }; });

  std::string s_gen, s_flow, s_truth, s_out;
  std::size_t s_n = 10000;
  std::uint64_t s_seed = 0;
  double s_range = 1.0;
  auto* smp = app.add_subcommand("sample", "Posterior ensemble from a trained flow");
  smp->add_option("--generator", s_gen, "Generator .gfp")->required()->check(CLI::ExistingFile);
  smp->add_option("--flow", s_flow, "Flow .gfp")->required()->check(CLI::ExistingFile);
  smp->add_option("--n", s_n, "Ensemble size");
  smp->add_option("--seed", s_seed, "Seed");
  smp->add_option("--truth", s_truth, "Ground truth GFTENSOR for metrics")->check(CLI::ExistingFile);
  smp->add_option("--range", s_range, "SSIM dynamic range");
  smp->add_option("--out", s_out, "Output directory")->required();
  smp->callback([&] { action = [&] { return cmd_sample(s_gen, s_flow, s_n, s_seed, s_truth, s_range, s_out); }; });

  Common h_c;
  std::size_t h_n = 0;
  auto* hmc = app.add_subcommand("hmc", "Latent-space HMC baseline");
  add_common(hmc, h_c, true);
  hmc->add_option("--n-samples", h_n, "Kept samples (overrides [hmc] n_samples)");
  hmc->callback([&] { action = [&] { return cmd_hmc(h_c, h_n); }; });

  Common o_c;
  std::size_t o_n = 0;
  auto* ois = app.add_subcommand("oracle-is", "Importance-sampling reference posterior from the true prior");
  add_common(ois, o_c, false);
  ois->add_option("--n", o_n, "Prior draws (overrides [oracle] n)");
  ois->callback([&] { action = [&] { return cmd_oracle(o_c, o_n); }; });

  Common cc_c;
  Eigen::Index cc_nz = 0;
  bool cc_hmc = false;
  auto* cc = app.add_subcommand("conjugate-check", "Flow VI (and HMC) against the closed-form Gaussian posterior");
  add_common(cc, cc_c, false);
  cc->add_option("--nz", cc_nz, "Latent dimension");
  cc->add_flag("--hmc", cc_hmc, "Also run HMC");
  cc->callback([&] { action = [&] { return cmd_conjugate_check(cc_c, cc_nz, cc_hmc); }; });

  ForwardOpts fo;
  auto* fw = app.add_subcommand("forward", "Apply a forward operator to fields");
  fw->add_option("--config", fo.config, "Take [problem] settings and seed from an experiment TOML")
      ->check(CLI::ExistingFile);
  fw->add_option("--kind", fo.kind, "heat | radon | phase")->check(CLI::IsMember({"heat", "radon", "phase"}));
  fw->add_option("--input", fo.input, "GFTENSOR: n_p x n_p image, (n, n_p, n_p) stack or n x n_p^2 rows")
      ->required()
      ->check(CLI::ExistingFile);
  fw->add_option("--out", fo.out, "Output GFTENSOR (one measurement per row)")->required();
  fw->add_option("--seed", fo.seed, "Mask and noise seed");
  fw->add_option("--sigma2", fo.sigma2, "Add N(0, sigma2) noise when positive");
  fw->add_option("--n-angles", fo.n_angles, "Radon projection angles");
  fw->add_option("--mask-r", fo.mask_r, "Phase mask acceleration");
  fw->add_option("--center-fraction", fo.center_fraction, "Phase mask central fraction");
  fw->callback([&] { action = [&] { return cmd_forward(fo); }; });

  std::string m_a, m_b, m_out;
  double m_range = 1.0;
  auto* met = app.add_subcommand("metrics", "RMSE and SSIM between two images");
  met->add_option("--a", m_a, "First GFTENSOR")->required()->check(CLI::ExistingFile);
  met->add_option("--b", m_b, "Second GFTENSOR")->required()->check(CLI::ExistingFile);
  met->add_option("--range", m_range, "SSIM dynamic range");
  met->add_option("--out", m_out, "Also write a CSV here");
  met->callback([&] { action = [&] { return cmd_metrics(m_a, m_b, m_range, m_out); }; });

  Common sw_c;
  std::vector<Eigen::Index> sw_nz;
  auto* sw = app.add_subcommand("sweep", "Latent-dimension sweep");
  add_common(sw, sw_c, false);
  sw->add_option("--nz", sw_nz, "Comma-separated latent dimensions")->required()->delimiter(',');
  sw->callback([&] { action = [&] { return cmd_sweep(sw_c, sw_nz); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }
  if (threads > 0) setenv("GANFLOW_THREADS", std::to_string(threads).c_str(), 1);

  try {
    return action();
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << '\n';
    return 2;
  }
}
