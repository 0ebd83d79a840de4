#include "ganflow/prior_data.hpp"

#include <cmath>
#include <cstdio>

#include "ganflow/errors.hpp"
#include "ganflow/parallel.hpp"
#include "ganflow/tensor_io.hpp"

namespace ganflow::prior {

// ---- Rescaler ---------------------------------------------------------------------

Rescaler::Rescaler(double lo_, double hi_) : lo(lo_), hi(hi_) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
    throw ValidationError("rescaler needs finite bounds with lo < hi");
}

Tensor Rescaler::rescale(const Tensor& x) const {
  return ((2.0 / (hi - lo)) * (x.array() - lo) - 1.0).matrix();
}

Tensor Rescaler::unrescale(const Tensor& t) const { return (lo + 0.5 * (hi - lo) * (t.array() + 1.0)).matrix(); }

ad::Var Rescaler::unrescale(ad::Var t) const { return (0.5 * (hi - lo)) * (t + 1.0) + lo; }

Rescaler rescaler_for(const std::string& kind) {
  if (kind == "heat") return {0.0, 4.0};
  if (kind == "radon" || kind == "phase") return {0.0, 1.0};
  throw ValidationError("no default rescaler for problem kind '" + kind + "'");
}

// ---- rectangles -------------------------------------------------------------------

RectParams draw_rect_params(const RectPriorConfig& cfg, Rng& rng) {
  const double l = cfg.length;
  RectParams p;
  p.x0 = uniform(rng, cfg.corner_lo * l, cfg.corner_hi * l);
  p.y0 = uniform(rng, cfg.corner_lo * l, cfg.corner_hi * l);
  p.x1 = uniform(rng, cfg.far_lo * l, cfg.far_hi * l);
  p.y1 = uniform(rng, cfg.far_lo * l, cfg.far_hi * l);
  return p;
}

RectCells snap_rect(const RectPriorConfig& cfg, const RectParams& p) {
  const double h = cfg.spacing();
  const Eigen::Index last = cfg.n_p - 1;
  auto node = [&](double v) {
    return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::lround(v / h)) - 1, 0, last);
  };
  RectCells c{node(p.y0), node(p.x0), node(p.y1), node(p.x1)};
  if (c.row1 < c.row0) std::swap(c.row0, c.row1);
  if (c.col1 < c.col0) std::swap(c.col0, c.col1);
  return c;
}

Tensor rect_field(const RectPriorConfig& cfg, const RectCells& c) {
  Tensor f = Tensor::Zero(cfg.n_p, cfg.n_p);
  const double width = static_cast<double>(c.col1 - c.col0);
  for (Eigen::Index j = c.col0; j <= c.col1; ++j) {
    const double frac = width > 0 ? static_cast<double>(j - c.col0) / width : 0.0;
    const double v = cfg.left_value + (cfg.right_value - cfg.left_value) * frac;
    for (Eigen::Index i = c.row0; i <= c.row1; ++i) f(i, j) = v;
  }
  return f;
}

Tensor rect_field(const RectPriorConfig& cfg, const RectParams& p) { return rect_field(cfg, snap_rect(cfg, p)); }

Tensor gen_rect_field(const RectPriorConfig& cfg, Rng& rng) { return rect_field(cfg, draw_rect_params(cfg, rng)); }

// ---- phantoms ---------------------------------------------------------------------

EllipseTable shepp_logan_base() {
  return {{
      {0.0, 0.0, 0.69, 0.92, 0.0, 1.0},
      {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8},
      {0.22, 0.0, 0.11, 0.31, -18.0, -0.2},
      {-0.22, 0.0, 0.16, 0.41, -18.0, -0.2},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.1},
      {0.0, 0.1, 0.046, 0.026, 0.0, 0.1},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.1},
      {-0.08, -0.605, 0.046, 0.023, 0.0, 0.1},
      {0.0, -0.606, 0.023, 0.023, 0.0, 0.1},
      {0.06, -0.605, 0.023, 0.046, 0.0, 0.1},
  }};
}

int PhantomConfig::shift_range() const {
  if (max_shift >= 0) return max_shift;
  return static_cast<int>(std::lround(8.0 * static_cast<double>(n_p) / 128.0));
}

PhantomParams nominal_phantom_params() {
  PhantomParams p;
  p.ellipses = shepp_logan_base();
  return p;
}

PhantomParams draw_phantom_params(const PhantomConfig& cfg, Rng& rng) {
  PhantomParams p = nominal_phantom_params();
  for (auto& e : p.ellipses) {
    double* fields[6] = {&e.r, &e.s, &e.a, &e.b, &e.alpha, &e.rho};
    for (int k = 0; k < 6; ++k) *fields[k] += cfg.scales[static_cast<std::size_t>(k)] * uniform(rng, -1.0, 1.0);
  }
  const int range = cfg.shift_range();
  std::uniform_int_distribution<int> shift(-range, range);
  p.shift_h = shift(rng);
  p.shift_v = shift(rng);
  p.beta = uniform(rng, -cfg.max_rotation, cfg.max_rotation);
  return p;
}

double phantom_density(const EllipseTable& ellipses, double r, double s) {
  double total = 0.0;
  for (const auto& e : ellipses) {
    const double t = e.alpha * std::numbers::pi / 180.0;
    const double dr = r - e.r;
    const double ds = s - e.s;
    const double u = (dr * std::cos(t) + ds * std::sin(t)) / e.a;
    const double v = (-dr * std::sin(t) + ds * std::cos(t)) / e.b;
    if (u * u + v * v <= 1.0) total += e.rho;
  }
  return total;
}

Tensor rasterize_phantom(const EllipseTable& ellipses, Eigen::Index n) {
  Tensor img(n, n);
  const double nn = static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r = -1.0 + (2.0 * static_cast<double>(j) + 1.0) / nn;
      const double s = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / nn;
      img(i, j) = std::clamp(phantom_density(ellipses, r, s), 0.0, 1.0);
    }
  return img;
}

Tensor shift_rotate(const Tensor& image, int shift_h, int shift_v, double beta_deg) {
  const Eigen::Index n = image.rows();
  Tensor shifted = Tensor::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Eigen::Index si = i - shift_v;
      const Eigen::Index sj = j - shift_h;
      if (si >= 0 && sj >= 0 && si < n && sj < n) shifted(i, j) = image(si, sj);
    }
  const double c = 0.5 * static_cast<double>(n - 1);
  const double t = beta_deg * std::numbers::pi / 180.0;
  const double ct = std::cos(t);
  const double st = std::sin(t);
  auto at = [&](Eigen::Index i, Eigen::Index j) {
    return (i < 0 || j < 0 || i >= n || j >= n) ? 0.0 : shifted(i, j);
  };
  Tensor out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double x = static_cast<double>(j) - c;
      const double y = c - static_cast<double>(i);
      const double xs = x * ct + y * st;
      const double ys = -x * st + y * ct;
      const double col = xs + c;
      const double row = c - ys;
      const auto j0 = static_cast<Eigen::Index>(std::floor(col));
      const auto i0 = static_cast<Eigen::Index>(std::floor(row));
      const double fx = col - static_cast<double>(j0);
      const double fy = row - static_cast<double>(i0);
      const double v = (1 - fy) * ((1 - fx) * at(i0, j0) + fx * at(i0, j0 + 1)) +
                       fy * ((1 - fx) * at(i0 + 1, j0) + fx * at(i0 + 1, j0 + 1));
      out(i, j) = std::clamp(v, 0.0, 1.0);
    }
  return out;
}

Tensor phantom_image(const PhantomConfig& cfg, const PhantomParams& p) {
  return shift_rotate(rasterize_phantom(p.ellipses, cfg.n_p), p.shift_h, p.shift_v, p.beta);
}

Tensor gen_phantom(const PhantomConfig& cfg, Rng& rng) { return phantom_image(cfg, draw_phantom_params(cfg, rng)); }

// ---- datasets ---------------------------------------------------------------------

void DatasetSpec::validate() const {
  if (kind != "rect" && kind != "phantom") throw ValidationError("dataset kind must be rect or phantom");
  if (n_p < 2) throw ValidationError("dataset n_p must be at least 2");
}

void DatasetSpec::to_toml(toml::Table& t) const {
  t.set("kind", kind);
  t.set("n_p", static_cast<std::int64_t>(n_p));
  t.set("count", static_cast<std::int64_t>(count));
  t.set("seed", static_cast<std::int64_t>(seed));
  if (kind == "rect") {
    t.set("length", rect.length);
    t.set("corner_range", toml::Array{rect.corner_lo, rect.corner_hi});
    t.set("far_corner_range", toml::Array{rect.far_lo, rect.far_hi});
    t.set("edge_values", toml::Array{rect.left_value, rect.right_value});
  } else {
    toml::Array scales;
    for (double s : phantom.scales) scales.emplace_back(s);
    t.set("perturbation_scales", scales);
    t.set("max_shift", phantom.shift_range());
    t.set("max_rotation", phantom.max_rotation);
  }
}

DatasetSpec DatasetSpec::from_toml(const toml::Table& t) {
  DatasetSpec s;
  s.kind = t.get_or("kind", std::string("rect"));
  s.n_p = t.get_or("n_p", std::int64_t{s.kind == "rect" ? 16 : 32});
  s.count = static_cast<std::size_t>(t.get_or("count", std::int64_t{2000}));
  s.seed = static_cast<std::uint64_t>(t.get_or("seed", std::int64_t{0}));
  if (t.contains("length")) s.rect.length = t.get_double("length");
  if (t.contains("corner_range")) {
    const auto v = t.get_doubles("corner_range");
    if (v.size() != 2) throw ValidationError("corner_range needs two values");
    s.rect.corner_lo = v[0];
    s.rect.corner_hi = v[1];
  }
  if (t.contains("far_corner_range")) {
    const auto v = t.get_doubles("far_corner_range");
    if (v.size() != 2) throw ValidationError("far_corner_range needs two values");
    s.rect.far_lo = v[0];
    s.rect.far_hi = v[1];
  }
  if (t.contains("edge_values")) {
    const auto v = t.get_doubles("edge_values");
    if (v.size() != 2) throw ValidationError("edge_values needs two values");
    s.rect.left_value = v[0];
    s.rect.right_value = v[1];
  }
  if (t.contains("perturbation_scales")) {
    const auto v = t.get_doubles("perturbation_scales");
    if (v.size() != 6) throw ValidationError("perturbation_scales needs six values");
    std::copy(v.begin(), v.end(), s.phantom.scales.begin());
  }
  s.phantom.max_shift = t.get_or("max_shift", -1);
  s.phantom.max_rotation = t.get_or("max_rotation", 20.0);
  s.rect.n_p = s.n_p;
  s.phantom.n_p = s.n_p;
  s.validate();
  return s;
}

Tensor generate_sample(const DatasetSpec& spec, std::size_t index) {
  Rng rng = make_rng(spec.seed, index);
  if (spec.kind == "rect") {
    RectPriorConfig cfg = spec.rect;
    cfg.n_p = spec.n_p;
    return gen_rect_field(cfg, rng);
  }
  PhantomConfig cfg = spec.phantom;
  cfg.n_p = spec.n_p;
  return gen_phantom(cfg, rng);
}

Tensor generate_dataset(const DatasetSpec& spec, unsigned workers) {
  spec.validate();
  Tensor out(static_cast<Eigen::Index>(spec.count), spec.n_p * spec.n_p);
  parallel_for(
      spec.count, [&](std::size_t i) { out.row(static_cast<Eigen::Index>(i)) = as_row(generate_sample(spec, i)); },
      workers);
  return out;
}

namespace {
std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%06zu.gft", i);
  return buf;
}
}  // namespace

void write_dataset(const std::filesystem::path& dir, const DatasetSpec& spec, const Tensor& samples) {
  std::filesystem::create_directories(dir);
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    write_gftensor(dir / sample_name(static_cast<std::size_t>(i)), as_image(samples.row(i), spec.n_p));
  toml::Document manifest;
  DatasetSpec s = spec;
  s.count = static_cast<std::size_t>(samples.rows());
  s.to_toml(manifest.table("dataset"));
  manifest.table("files").set("pattern", "sample_%06d.gft");
  manifest.save(dir / "manifest.toml");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest = toml::Document::load(dir / "manifest.toml");
  Dataset d;
  d.spec = DatasetSpec::from_toml(manifest.section("dataset"));
  d.samples.resize(static_cast<Eigen::Index>(d.spec.count), d.spec.n_p * d.spec.n_p);
  for (std::size_t i = 0; i < d.spec.count; ++i) {
    const TensorFile f = read_gftensor(dir / sample_name(i));
    if (f.data.size() != d.spec.n_p * d.spec.n_p)
      throw ShapeError("dataset sample " + std::to_string(i) + " has the wrong size");
    d.samples.row(static_cast<Eigen::Index>(i)) = as_row(f.data);
  }
  return d;
}

}  // namespace ganflow::prior
