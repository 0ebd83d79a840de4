#include "ganflow/flows.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <numeric>
#include <sstream>

#include "ganflow/config.hpp"
#include "ganflow/errors.hpp"
#include "ganflow/nn.hpp"

namespace ganflow::flows {

namespace {

constexpr Eigen::Index kChunk = 4096;

std::vector<Eigen::Index> inverse_perm(const std::vector<Eigen::Index>& perm) {
  std::vector<Eigen::Index> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[static_cast<std::size_t>(perm[k])] = static_cast<Eigen::Index>(k);
  return inv;
}

bool is_permutation_of(const std::vector<Eigen::Index>& perm, Eigen::Index n) {
  if (static_cast<Eigen::Index>(perm.size()) != n) return false;
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (auto v : perm) {
    if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)]) return false;
    seen[static_cast<std::size_t>(v)] = true;
  }
  return true;
}

nn::Mlp coupling_net(const Layer& l, int which, Eigen::Index in, Eigen::Index out) {
  nn::Mlp m{l.param("net" + std::to_string(which)), {in}, nn::Activation::Tanh, nn::Activation::Identity};
  for (auto h : l.hidden) m.widths.push_back(h);
  m.widths.push_back(2 * out);
  return m;
}

// (s, t) for one coupling sub-step: h = net(x) * gain, s = tanh(h[:out]), t = h[out:].
std::pair<ad::Var, ad::Var> scale_shift(const Layer& l, const ad::Bindings& p, int which, ad::Var x, Eigen::Index out) {
  const auto net = coupling_net(l, which, x.cols(), out);
  const ad::Var gain = p.at(l.param("gain" + std::to_string(which)));
  const ad::Var h = net.forward(p, x) * ad::broadcast(gain, x.rows(), 2 * out);
  return {ad::tanh(ad::slice_cols(h, 0, out)), ad::slice_cols(h, out, out)};
}

// Also returns w.u_hat = m(w.u) in closed form, which is >= -1 without rounding.
ad::Var constrain(ad::Var u, ad::Var w, ad::Var& uw) {
  const ad::Var w2 = ad::sum(ad::square(w));
  if (std::sqrt(w2.scalar()) < 1e-12) throw ValidationError("planar layer: |w| < 1e-12");
  const ad::Var wu = ad::sum(w * u);
  uw = ad::softplus(wu) - 1.0;
  return u + ad::broadcast((uw - wu) / w2, 1, w.cols()) * w;
}

ad::Var layer_forward(const Layer& l, const ad::Bindings& p, ad::Var x, ad::Var& logdet) {
  auto& g = *x.graph;
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  switch (l.kind) {
    case LayerKind::Planar: {
      const ad::Var w = p.at(l.param("w"));
      ad::Var uw;
      const ad::Var uh = constrain(p.at(l.param("u")), w, uw);
      const ad::Var h = ad::tanh(ad::matmul(x, ad::transpose(w)) + ad::broadcast(p.at(l.param("b")), n, 1));
      logdet = ad::log(1.0 + (1.0 - ad::square(h)) * ad::broadcast(uw, n, 1));
      return x + ad::matmul(h, uh);
    }
    case LayerKind::ActNorm: {
      if (!l.initialized) throw ValidationError("actnorm layer " + l.prefix + " used before actnorm_init");
      const ad::Var ls = p.at(l.param("log_scale"));
      logdet = ad::broadcast(ad::sum(ls), n, 1);
      return (x - ad::broadcast(p.at(l.param("bias")), n, d)) * ad::exp(ad::broadcast(ls, n, d));
    }
    case LayerKind::Permutation:
      logdet = g.constant(Tensor::Zero(n, 1));
      return ad::permute_cols(x, l.perm);
    case LayerKind::Coupling: {
      const Eigen::Index na = l.n_a, nb = d - l.n_a;
      const ad::Var xp = ad::permute_cols(x, l.perm);
      const ad::Var xa = ad::slice_cols(xp, 0, na);
      const ad::Var xb = ad::slice_cols(xp, na, nb);
      const auto [s1, t1] = scale_shift(l, p, 1, xa, nb);
      const ad::Var yb = xb * ad::exp(s1) + t1;
      const auto [s2, t2] = scale_shift(l, p, 2, yb, na);
      const ad::Var ya = xa * ad::exp(s2) + t2;
      logdet = ad::sum_cols(s1) + ad::sum_cols(s2);
      return ad::permute_cols(ad::concat_cols(ya, yb), inverse_perm(l.perm));
    }
  }
  throw ValidationError("unknown flow layer kind");
}

ad::Var layer_inverse(const Layer& l, const ad::Bindings& p, ad::Var y) {
  const Eigen::Index n = y.rows();
  const Eigen::Index d = y.cols();
  switch (l.kind) {
    case LayerKind::Planar:
      throw ValidationError("planar layers have no closed-form inverse");
    case LayerKind::ActNorm: {
      if (!l.initialized) throw ValidationError("actnorm layer " + l.prefix + " used before actnorm_init");
      const ad::Var ls = p.at(l.param("log_scale"));
      return y * ad::exp(-ad::broadcast(ls, n, d)) + ad::broadcast(p.at(l.param("bias")), n, d);
    }
    case LayerKind::Permutation:
      return ad::permute_cols(y, inverse_perm(l.perm));
    case LayerKind::Coupling: {
      const Eigen::Index na = l.n_a, nb = d - l.n_a;
      const ad::Var yp = ad::permute_cols(y, l.perm);
      const ad::Var ya = ad::slice_cols(yp, 0, na);
      const ad::Var yb = ad::slice_cols(yp, na, nb);
      const auto [s2, t2] = scale_shift(l, p, 2, yb, na);
      const ad::Var xa = (ya - t2) * ad::exp(-s2);
      const auto [s1, t1] = scale_shift(l, p, 1, xa, nb);
      const ad::Var xb = (yb - t1) * ad::exp(-s1);
      return ad::permute_cols(ad::concat_cols(xa, xb), inverse_perm(l.perm));
    }
  }
  throw ValidationError("unknown flow layer kind");
}

void add_layer_params(const Layer& l, Eigen::Index d, ParamVector& params, Rng& rng, double planar_sd) {
  switch (l.kind) {
    case LayerKind::Planar:
      params.add(l.param("u"), planar_sd * standard_normal(rng, 1, d));
      params.add(l.param("w"), planar_sd * standard_normal(rng, 1, d));
      params.add(l.param("b"), planar_sd * standard_normal(rng, 1, 1));
      break;
    case LayerKind::ActNorm:
      params.add(l.param("log_scale"), Tensor::Zero(1, d));
      params.add(l.param("bias"), Tensor::Zero(1, d));
      break;
    case LayerKind::Permutation:
      break;
    case LayerKind::Coupling:
      coupling_net(l, 1, l.n_a, d - l.n_a).init(params, rng);
      params.add(l.param("gain1"), Tensor::Zero(1, 1));
      coupling_net(l, 2, d - l.n_a, l.n_a).init(params, rng);
      params.add(l.param("gain2"), Tensor::Zero(1, 1));
      break;
  }
}

std::filesystem::path sidecar(const std::filesystem::path& p) {
  auto s = p;
  return s.replace_extension(".toml");
}

toml::Array to_array(const std::vector<Eigen::Index>& v) {
  toml::Array out;
  for (auto x : v) out.emplace_back(static_cast<std::int64_t>(x));
  return out;
}

}  // namespace

std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Planar: return "planar";
    case LayerKind::ActNorm: return "actnorm";
    case LayerKind::Permutation: return "permute";
    case LayerKind::Coupling: return "coupling";
  }
  return "?";
}

LayerKind parse_kind(const std::string& name) {
  if (name == "planar") return LayerKind::Planar;
  if (name == "actnorm") return LayerKind::ActNorm;
  if (name == "permute") return LayerKind::Permutation;
  if (name == "coupling") return LayerKind::Coupling;
  throw ValidationError("unknown flow layer kind '" + name + "'");
}

ad::Var planar_constrain(ad::Var u, ad::Var w) {
  ad::Var uw;
  return constrain(u, w, uw);
}

Eigen::RowVectorXd planar_constrain(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& w) {
  const double w2 = w.squaredNorm();
  if (std::sqrt(w2) < 1e-12) throw ValidationError("planar layer: |w| < 1e-12");
  const double wu = w.dot(u);
  // softplus(a) = max(a, 0) + log1p(exp(-|a|))
  const double m = -1.0 + std::max(wu, 0.0) + std::log1p(std::exp(-std::abs(wu)));
  // component of u orthogonal to w, plus m along w
  return (u - (wu / w2) * w) + (m / w2) * w;
}

FlowModel::FlowModel(Eigen::Index n_z) : n_z_(n_z) {
  if (n_z < 1) throw ValidationError("flow latent dimension must be positive");
}

Layer& FlowModel::push(LayerKind kind) {
  Layer l;
  l.kind = kind;
  l.prefix = "f" + std::to_string(layers_.size());
  layers_.push_back(std::move(l));
  return layers_.back();
}

void FlowModel::add_planar(Rng& rng, double init_sd) {
  const Layer& l = push(LayerKind::Planar);
  add_layer_params(l, n_z_, params_, rng, init_sd);
}

void FlowModel::add_actnorm() {
  Layer& l = push(LayerKind::ActNorm);
  l.initialized = false;
  Rng unused(0);
  add_layer_params(l, n_z_, params_, unused, 0.0);
}

void FlowModel::add_permutation(Rng& rng) {
  Layer& l = push(LayerKind::Permutation);
  l.perm.resize(static_cast<std::size_t>(n_z_));
  std::iota(l.perm.begin(), l.perm.end(), 0);
  std::shuffle(l.perm.begin(), l.perm.end(), rng);
}

void FlowModel::add_coupling(Rng& rng, std::vector<Eigen::Index> hidden) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n_z_));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  add_coupling(rng, std::move(perm), n_z_ / 2, std::move(hidden));
}

void FlowModel::add_coupling(Rng& rng, std::vector<Eigen::Index> partition, Eigen::Index n_a,
                             std::vector<Eigen::Index> hidden) {
  if (n_z_ < 2) throw ValidationError("coupling layers need a latent dimension of at least 2");
  if (!is_permutation_of(partition, n_z_)) throw ValidationError("coupling partition must cover each index once");
  if (n_a < 1 || n_a >= n_z_) throw ValidationError("coupling partition halves must be nonempty");
  if (hidden.empty()) hidden = {2 * n_z_, 2 * n_z_};
  Layer& l = push(LayerKind::Coupling);
  l.perm = std::move(partition);
  l.n_a = n_a;
  l.hidden = std::move(hidden);
  add_layer_params(l, n_z_, params_, rng, 0.0);
}

FlowModel FlowModel::from_spec(const std::string& spec, Eigen::Index n_z, std::uint64_t seed) {
  FlowModel f(n_z);
  f.spec_ = spec;
  Rng rng = make_rng(seed, 0x666c6f77ULL);
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
    if (item.empty() || item == "identity") continue;
    std::string kind = item;
    long count = 1;
    if (const auto colon = item.find(':'); colon != std::string::npos) {
      kind = item.substr(0, colon);
      const std::string c = item.substr(colon + 1);
      try {
        std::size_t used = 0;
        count = std::stol(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw ValidationError("bad layer count in flow spec item '" + item + "'");
      }
      if (count < 0) throw ValidationError("bad layer count in flow spec item '" + item + "'");
    }
    const LayerKind k = parse_kind(kind);
    for (long i = 0; i < count; ++i) {
      switch (k) {
        case LayerKind::Planar: f.add_planar(rng); break;
        case LayerKind::ActNorm: f.add_actnorm(); break;
        case LayerKind::Permutation: f.add_permutation(rng); break;
        case LayerKind::Coupling:
          f.add_actnorm();
          f.add_coupling(rng);
          break;
      }
    }
  }
  return f;
}

bool FlowModel::initialized() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const Layer& l) { return l.initialized; });
}

bool FlowModel::invertible() const {
  return std::none_of(layers_.begin(), layers_.end(), [](const Layer& l) { return l.kind == LayerKind::Planar; });
}

void FlowModel::actnorm_init(const Tensor& z) {
  if (z.cols() != n_z_) throw ShapeError("actnorm_init: batch width does not match the flow");
  if (z.rows() < 2) throw ValidationError("actnorm_init needs a batch of at least 2");
  Tensor x = z;
  for (auto& l : layers_) {
    if (l.kind == LayerKind::ActNorm && !l.initialized) {
      const Eigen::RowVectorXd mean = x.colwise().mean();
      const Eigen::RowVectorXd sd =
          ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().matrix();
      if (sd.minCoeff() < 1e-12) throw ValidationError("actnorm_init: degenerate (zero-variance) dimension");
      params_.set(l.param("bias"), mean);
      params_.set(l.param("log_scale"), (-sd.array().log()).matrix());
      l.initialized = true;
    }
    ad::Graph g;
    const auto p = g.bind_constants(params_);
    ad::Var ld;
    x = layer_forward(l, p, g.constant(x), ld).value();
  }
}

FlowVars FlowModel::forward(const ad::Bindings& p, ad::Var z) const {
  if (z.cols() != n_z_) throw ShapeError("flow: input width does not match the flow");
  FlowVars out;
  out.y = z;
  out.logdet = z.graph->constant(Tensor::Zero(z.rows(), 1));
  for (const auto& l : layers_) {
    ad::Var ld;
    out.y = layer_forward(l, p, out.y, ld);
    out.layer_logdets.push_back(ld);
    out.logdet = out.logdet + ld;
  }
  return out;
}

FlowValues FlowModel::forward(const Tensor& z) const {
  if (z.cols() != n_z_) throw ShapeError("flow: input width does not match the flow");
  FlowValues out;
  out.y.resize(z.rows(), n_z_);
  out.logdet.resize(z.rows());
  out.layer_logdets.assign(layers_.size(), Eigen::VectorXd(z.rows()));
  for (Eigen::Index r0 = 0; r0 < z.rows(); r0 += kChunk) {
    const Eigen::Index m = std::min(kChunk, z.rows() - r0);
    ad::Graph g;
    const auto p = g.bind_constants(params_);
    const FlowVars v = forward(p, g.constant(z.middleRows(r0, m)));
    out.y.middleRows(r0, m) = v.y.value();
    out.logdet.segment(r0, m) = v.logdet.value().col(0);
    for (std::size_t k = 0; k < layers_.size(); ++k) out.layer_logdets[k].segment(r0, m) = v.layer_logdets[k].value().col(0);
  }
  return out;
}

Tensor FlowModel::inverse(const Tensor& y) const {
  if (y.cols() != n_z_) throw ShapeError("flow: input width does not match the flow");
  if (!invertible()) throw ValidationError("flow contains planar layers, which have no closed-form inverse");
  if (layers_.empty()) return y;
  Tensor out(y.rows(), n_z_);
  for (Eigen::Index r0 = 0; r0 < y.rows(); r0 += kChunk) {
    const Eigen::Index m = std::min(kChunk, y.rows() - r0);
    ad::Graph g;
    ad::Var x = g.constant(y.middleRows(r0, m));
    const auto p = g.bind_constants(params_);
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = layer_inverse(*it, p, x);
    out.middleRows(r0, m) = x.value();
  }
  return out;
}

void FlowModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  params_.save(path);
  toml::Document doc;
  auto& f = doc.table("flow");
  f.set("n_z", static_cast<std::int64_t>(n_z_));
  f.set("spec", spec_);
  f.set("n_layers", static_cast<std::int64_t>(layers_.size()));
  f.set("params", path.filename().string());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    auto& t = doc.table("layer." + std::to_string(k));
    t.set("kind", kind_name(l.kind));
    if (!l.perm.empty()) t.set("perm", to_array(l.perm));
    if (l.kind == LayerKind::Coupling) {
      t.set("n_a", static_cast<std::int64_t>(l.n_a));
      t.set("hidden", to_array(l.hidden));
    }
    if (l.kind == LayerKind::ActNorm) t.set("initialized", l.initialized);
  }
  doc.save(sidecar(path));
}

FlowModel FlowModel::load(const std::filesystem::path& path) {
  const auto doc = toml::Document::load(sidecar(path));
  const auto& f = doc.section("flow");
  FlowModel m(f.get_int("n_z"));
  m.spec_ = f.get_or("spec", "");
  const auto n_layers = f.get_int("n_layers");
  ParamVector expect;
  Rng unused(0);
  for (std::int64_t k = 0; k < n_layers; ++k) {
    const auto* t = doc.find("layer." + std::to_string(k));
    if (t == nullptr) throw ValidationError("flow sidecar is missing [layer." + std::to_string(k) + "]");
    Layer& l = m.push(parse_kind(t->get_string("kind")));
    if (t->contains("perm")) {
      const auto v = t->get_ints("perm");
      l.perm.assign(v.begin(), v.end());
      if (!is_permutation_of(l.perm, m.n_z_)) throw ValidationError("flow sidecar: bad permutation in " + l.prefix);
    }
    if (l.kind == LayerKind::Permutation && l.perm.empty())
      throw ValidationError("flow sidecar: permutation layer without perm");
    if (l.kind == LayerKind::Coupling) {
      if (l.perm.empty()) throw ValidationError("flow sidecar: coupling layer without partition");
      l.n_a = t->get_int("n_a");
      const auto h = t->get_ints("hidden");
      l.hidden.assign(h.begin(), h.end());
      if (l.n_a < 1 || l.n_a >= m.n_z_) throw ValidationError("flow sidecar: bad coupling split in " + l.prefix);
    }
    if (l.kind == LayerKind::ActNorm) l.initialized = t->get_bool("initialized");
    add_layer_params(l, m.n_z_, expect, unused, 0.0);
  }
  m.params_ = ParamVector::load(path);
  if (m.params_.names() != expect.names() || m.params_.size() != expect.size())
    throw ShapeError("flow payload does not match its sidecar layer list");
  return m;
}

}  // namespace ganflow::flows
