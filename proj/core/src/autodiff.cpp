#include "ganflow/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "ganflow/errors.hpp"

namespace ganflow::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add-scalar";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Affine: return "affine";
    case Op::Tanh: return "tanh";
    case Op::LeakyRelu: return "leaky-relu";
    case Op::LeakyMask: return "leaky-mask";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::SafeRecip: return "safe-recip";
    case Op::Broadcast: return "broadcast";
    case Op::ReduceTo: return "reduce";
    case Op::Norm2Rows: return "norm2";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Pad: return "pad";
    case Op::Permute: return "permute";
    case Op::Magnitude: return "magnitude";
    case Op::External: return "external";
    case Op::ExternalVjp: return "external-vjp";
  }
  return "?";
}

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << 'x' << t.cols();
  return os.str();
}

[[noreturn]] void shape_fail(std::string_view what, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(what) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_same(std::string_view what, Var a, Var b) {
  if (a.graph != b.graph) throw ValidationError(std::string(what) + ": operands from different graphs");
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(what, a.value(), b.value());
}

Graph::Node unary(Op op, Var a, double k = 0.0) {
  Graph::Node n;
  n.op = op;
  n.a = a.id;
  n.k = k;
  return n;
}

Graph::Node binary(Op op, Var a, Var b) {
  Graph::Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  return n;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

const Tensor& Var::value() const { return graph->node(id).value; }

double Var::scalar() const {
  const auto& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on a " + shape_str(v) + " node");
  return v(0, 0);
}

Var Graph::push(Node node) {
  node.value = compute(node);
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  check_finite(id);
  return Var{this, id};
}

Var Graph::input(const std::string& name, Tensor value) {
  if (inputs_.count(name)) throw ValidationError("duplicate graph input '" + name + "'");
  Node n;
  n.op = Op::Input;
  n.name = name;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  check_finite(id);
  inputs_.emplace(name, id);
  return Var{this, id};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  check_finite(id);
  return Var{this, id};
}

Var Graph::scalar(double v) { return constant(Tensor::Constant(1, 1, v)); }

Var Graph::input_var(const std::string& name) {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw ValidationError("segment '" + name + "' is not an input of the graph");
  return Var{this, it->second};
}

Bindings Graph::bind_inputs(const ParamVector& params) {
  Bindings out;
  for (const auto& s : params.segments()) out.emplace(s.name, input(s.name, params.get(s.name)));
  return out;
}

Bindings Graph::bind_constants(const ParamVector& params) {
  Bindings out;
  for (const auto& s : params.segments()) out.emplace(s.name, constant(params.get(s.name)));
  return out;
}

Tensor Graph::compute(const Node& n) const {
  auto val = [this](int id) -> const Tensor& { return nodes_[static_cast<std::size_t>(id)].value; };
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      return n.value;
    case Op::Add: return val(n.a) + val(n.b);
    case Op::Sub: return val(n.a) - val(n.b);
    case Op::Mul: return val(n.a).cwiseProduct(val(n.b));
    case Op::Div: return val(n.a).cwiseQuotient(val(n.b));
    case Op::Scale: return n.k * val(n.a);
    case Op::AddScalar: return (val(n.a).array() + n.k).matrix();
    case Op::MatMul: return val(n.a) * val(n.b);
    case Op::Transpose: return val(n.a).transpose();
    case Op::Affine: {
      const auto& x = val(n.a);
      const auto& w = val(n.b);
      const auto& b = val(static_cast<int>(n.i0));
      Tensor y = x * w.transpose();
      y.rowwise() += b.row(0);
      return y;
    }
    case Op::Tanh: return val(n.a).array().tanh().matrix();
    case Op::LeakyRelu: {
      const double s = n.k;
      return val(n.a).unaryExpr([s](double v) { return v > 0 ? v : s * v; });
    }
    case Op::LeakyMask: {
      const double s = n.k;
      return val(n.a).unaryExpr([s](double v) { return v > 0 ? 1.0 : s; });
    }
    case Op::Sigmoid: return val(n.a).unaryExpr([](double v) { return stable_sigmoid(v); });
    case Op::Softplus: return val(n.a).unaryExpr([](double v) { return stable_softplus(v); });
    case Op::Exp: return val(n.a).array().exp().matrix();
    case Op::Log: return val(n.a).array().log().matrix();
    case Op::Square: return val(n.a).array().square().matrix();
    case Op::Sqrt: return val(n.a).array().sqrt().matrix();
    case Op::SafeRecip:
      return val(n.a).unaryExpr([](double v) { return v == 0.0 ? 0.0 : 1.0 / v; });
    case Op::Broadcast: {
      const auto& a = val(n.a);
      return a.replicate(n.i0 / a.rows(), n.i1 / a.cols());
    }
    case Op::ReduceTo: {
      const auto& a = val(n.a);
      if (n.i0 == a.rows() && n.i1 == a.cols()) return a;
      if (n.i0 == 1 && n.i1 == 1) return Tensor::Constant(1, 1, a.sum());
      if (n.i0 == 1) return a.colwise().sum();
      return a.rowwise().sum();
    }
    case Op::Norm2Rows: return val(n.a).rowwise().norm();
    case Op::Concat: {
      const auto& a = val(n.a);
      const auto& b = val(n.b);
      Tensor y(a.rows(), a.cols() + b.cols());
      y << a, b;
      return y;
    }
    case Op::Slice: return val(n.a).middleCols(n.i0, n.i1);
    case Op::Pad: {
      const auto& a = val(n.a);
      Tensor y = Tensor::Zero(a.rows(), n.i1);
      y.middleCols(n.i0, a.cols()) = a;
      return y;
    }
    case Op::Permute: {
      const auto& a = val(n.a);
      Tensor y(a.rows(), static_cast<Eigen::Index>(n.index.size()));
      for (std::size_t j = 0; j < n.index.size(); ++j) y.col(static_cast<Eigen::Index>(j)) = a.col(n.index[j]);
      return y;
    }
    case Op::Magnitude:
      return (val(n.a).array().square() + val(n.b).array().square()).sqrt().matrix();
    case Op::External: return n.external->forward(val(n.a));
    case Op::ExternalVjp: return n.external->vjp(val(n.b), val(n.a));
  }
  throw ValidationError("unknown op");
}

void Graph::check_finite(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  // x * 0 is 0 for finite x and NaN otherwise; this vectorizes, allFinite() does not.
  if (!((n.value.array() * 0.0).sum() == 0.0)) {
    std::ostringstream os;
    os << "non-finite value at node " << id << " (" << op_name(n.op) << ", " << shape_str(n.value) << ")";
    throw NumericalError(os.str());
  }
}

void Graph::truncate(std::size_t n) {
  for (std::size_t i = n; i < nodes_.size(); ++i)
    if (nodes_[i].op == Op::Input) inputs_.erase(nodes_[i].name);
  nodes_.resize(n);
}

const Tensor& Graph::evaluate(const ParamVector& inputs, Var output) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    if (n.op == Op::Input) {
      if (!inputs.contains(n.name)) throw ValidationError("unbound input '" + n.name + "'");
      Tensor v = inputs.get(n.name);
      if (v.rows() != n.value.rows() || v.cols() != n.value.cols())
        shape_fail("evaluate: input '" + n.name + "'", n.value, v);
      n.value = std::move(v);
    } else if (n.op != Op::Constant) {
      n.value = compute(n);
    }
    check_finite(static_cast<int>(i));
  }
  return output.value();
}

std::vector<int> Graph::emit_adjoints(int output, std::span<const int> wrt) {
  if (nodes_.at(static_cast<std::size_t>(output)).value.size() != 1)
    throw ShapeError("gradient requires a 1x1 output, got " + shape_str(nodes_[static_cast<std::size_t>(output)].value));
  const int n = output + 1;
  std::vector<char> needs(static_cast<std::size_t>(n), 0);
  for (int w : wrt)
    if (w < n) needs[static_cast<std::size_t>(w)] = 1;
  for (int i = 0; i < n; ++i) {
    const auto& nd = nodes_[static_cast<std::size_t>(i)];
    if (needs[static_cast<std::size_t>(i)] || nd.op == Op::LeakyMask) continue;
    int extra = nd.op == Op::Affine ? static_cast<int>(nd.i0) : -1;
    for (int p : {nd.a, nd.b, extra})
      if (p >= 0 && needs[static_cast<std::size_t>(p)]) needs[static_cast<std::size_t>(i)] = 1;
  }

  std::vector<int> adj(static_cast<std::size_t>(n), -1);
  if (needs[static_cast<std::size_t>(output)])
    adj[static_cast<std::size_t>(output)] = constant(Tensor::Ones(1, 1)).id;

  auto want = [&](int p) { return p >= 0 && needs[static_cast<std::size_t>(p)]; };
  auto accumulate = [&](int p, Var c) {
    auto& slot = adj[static_cast<std::size_t>(p)];
    slot = slot < 0 ? c.id : (Var{this, slot} + c).id;
  };

  for (int i = output; i >= 0; --i) {
    const auto si = static_cast<std::size_t>(i);
    if (adj[si] < 0 || !needs[si]) continue;
    // Copy what we need: push() may reallocate nodes_.
    const Op op = nodes_[si].op;
    const int ia = nodes_[si].a;
    const int ib = nodes_[si].b;
    const double k = nodes_[si].k;
    const Eigen::Index i0 = nodes_[si].i0;
    const Eigen::Index i1 = nodes_[si].i1;
    const Var g{this, adj[si]};
    const Var y{this, i};
    const Var a{this, ia};
    const Var b{this, ib};

    switch (op) {
      case Op::Input:
      case Op::Constant:
      case Op::LeakyMask:
        break;
      case Op::Add:
        if (want(ia)) accumulate(ia, g);
        if (want(ib)) accumulate(ib, g);
        break;
      case Op::Sub:
        if (want(ia)) accumulate(ia, g);
        if (want(ib)) accumulate(ib, -g);
        break;
      case Op::Mul:
        if (want(ia)) accumulate(ia, g * b);
        if (want(ib)) accumulate(ib, g * a);
        break;
      case Op::Div:
        if (want(ia)) accumulate(ia, g / b);
        if (want(ib)) accumulate(ib, -((g * y) / b));
        break;
      case Op::Scale:
        if (want(ia)) accumulate(ia, k * g);
        break;
      case Op::AddScalar:
        if (want(ia)) accumulate(ia, g);
        break;
      case Op::MatMul:
        if (want(ia)) accumulate(ia, matmul(g, transpose(b)));
        if (want(ib)) accumulate(ib, matmul(transpose(a), g));
        break;
      case Op::Transpose:
        if (want(ia)) accumulate(ia, transpose(g));
        break;
      case Op::Affine: {
        const int ibias = static_cast<int>(i0);
        if (want(ia)) accumulate(ia, matmul(g, b));
        if (want(ib)) accumulate(ib, matmul(transpose(g), a));
        if (want(ibias)) accumulate(ibias, sum_rows(g));
        break;
      }
      case Op::Tanh:
        if (want(ia)) accumulate(ia, g * (1.0 - square(y)));
        break;
      case Op::LeakyRelu: {
        Node m = unary(Op::LeakyMask, a, k);
        if (want(ia)) accumulate(ia, g * push(std::move(m)));
        break;
      }
      case Op::Sigmoid:
        if (want(ia)) accumulate(ia, g * (y * (1.0 - y)));
        break;
      case Op::Softplus:
        if (want(ia)) accumulate(ia, g * sigmoid(a));
        break;
      case Op::Exp:
        if (want(ia)) accumulate(ia, g * y);
        break;
      case Op::Log:
        if (want(ia)) accumulate(ia, g / a);
        break;
      case Op::Square:
        if (want(ia)) accumulate(ia, g * (2.0 * a));
        break;
      case Op::Sqrt:
        if (want(ia)) accumulate(ia, g * (0.5 * safe_recip(y)));
        break;
      case Op::SafeRecip:
        if (want(ia)) accumulate(ia, -(g * square(y)));
        break;
      case Op::Broadcast:
        if (want(ia)) accumulate(ia, reduce_to(g, a.rows(), a.cols()));
        break;
      case Op::ReduceTo:
        if (want(ia)) accumulate(ia, broadcast(g, a.rows(), a.cols()));
        break;
      case Op::Norm2Rows:
        if (want(ia)) accumulate(ia, a * broadcast(g * safe_recip(y), a.rows(), a.cols()));
        break;
      case Op::Concat:
        if (want(ia)) accumulate(ia, slice_cols(g, 0, a.cols()));
        if (want(ib)) accumulate(ib, slice_cols(g, a.cols(), b.cols()));
        break;
      case Op::Slice:
        if (want(ia)) accumulate(ia, pad_cols(g, i0, a.cols()));
        break;
      case Op::Pad:
        if (want(ia)) accumulate(ia, slice_cols(g, i0, a.cols()));
        break;
      case Op::Permute: {
        if (!want(ia)) break;
        const auto& perm = nodes_[si].index;
        if (static_cast<Eigen::Index>(perm.size()) != a.cols())
          throw ValidationError("permute adjoint requires a full permutation");
        std::vector<Eigen::Index> inv(perm.size());
        for (std::size_t j = 0; j < perm.size(); ++j) inv[static_cast<std::size_t>(perm[j])] = static_cast<Eigen::Index>(j);
        accumulate(ia, permute_cols(g, std::move(inv)));
        break;
      }
      case Op::Magnitude: {
        const double eps = k;
        Var smooth = sqrt(square(a) + square(b) + eps);
        Var scale = g / smooth;
        if (want(ia)) accumulate(ia, scale * a);
        if (want(ib)) accumulate(ib, scale * b);
        break;
      }
      case Op::External: {
        if (!want(ia)) break;
        Node v;
        v.op = Op::ExternalVjp;
        v.a = g.id;
        v.b = ia;
        v.external = nodes_[si].external;
        accumulate(ia, push(std::move(v)));
        break;
      }
      case Op::ExternalVjp:
        throw ValidationError("op '" + std::string(op_name(op)) + "' (" + nodes_[si].external->name +
                              ") has no differentiable adjoint");
    }
    (void)i1;
  }

  std::vector<int> out;
  out.reserve(wrt.size());
  for (int w : wrt) {
    if (w < n && adj[static_cast<std::size_t>(w)] >= 0) {
      out.push_back(adj[static_cast<std::size_t>(w)]);
    } else {
      const auto& v = nodes_.at(static_cast<std::size_t>(w)).value;
      out.push_back(constant(Tensor::Zero(v.rows(), v.cols())).id);
    }
  }
  return out;
}

std::vector<Var> Graph::adjoints(Var output, std::span<const Var> wrt) {
  std::vector<int> ids;
  ids.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.graph != this) throw ValidationError("adjoints: node from a different graph");
    ids.push_back(w.id);
  }
  std::vector<Var> out;
  for (int id : emit_adjoints(output.id, ids)) out.push_back(Var{this, id});
  return out;
}

std::vector<Tensor> Graph::adjoint_values(Var output, std::span<const Var> wrt) {
  const std::size_t mark = nodes_.size();
  std::vector<Tensor> out;
  try {
    auto vars = adjoints(output, wrt);
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(v.value());
  } catch (...) {
    truncate(mark);
    throw;
  }
  truncate(mark);
  return out;
}

ParamVector Graph::gradient(Var output, std::span<const std::string> wrt) {
  std::vector<Var> vars;
  vars.reserve(wrt.size());
  for (const auto& name : wrt) vars.push_back(input_var(name));
  auto values = adjoint_values(output, vars);
  ParamVector out;
  for (std::size_t i = 0; i < wrt.size(); ++i) out.add(wrt[i], values[i]);
  return out;
}

ParamVector Graph::gradient(const ParamVector& inputs, Var output, std::span<const std::string> wrt) {
  evaluate(inputs, output);
  return gradient(output, wrt);
}

Var gradient_as_nodes(Var output, Var wrt) {
  if (output.graph != wrt.graph) throw ValidationError("gradient_as_nodes: nodes from different graphs");
  const Var targets[] = {wrt};
  return output.graph->adjoints(output, targets).front();
}

// ---- op constructors -------------------------------------------------------

Var operator+(Var a, Var b) {
  require_same("add", a, b);
  return a.graph->push(binary(Op::Add, a, b));
}
Var operator-(Var a, Var b) {
  require_same("sub", a, b);
  return a.graph->push(binary(Op::Sub, a, b));
}
Var operator*(Var a, Var b) {
  require_same("mul", a, b);
  return a.graph->push(binary(Op::Mul, a, b));
}
Var operator/(Var a, Var b) {
  require_same("div", a, b);
  return a.graph->push(binary(Op::Div, a, b));
}
Var operator-(Var a) { return a.graph->push(unary(Op::Scale, a, -1.0)); }
Var operator*(double k, Var a) { return a.graph->push(unary(Op::Scale, a, k)); }
Var operator*(Var a, double k) { return k * a; }
Var operator+(Var a, double k) { return a.graph->push(unary(Op::AddScalar, a, k)); }
Var operator+(double k, Var a) { return a + k; }
Var operator-(Var a, double k) { return a + (-k); }
Var operator-(double k, Var a) { return (-a) + k; }

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a.value(), b.value());
  return a.graph->push(binary(Op::MatMul, a, b));
}

Var transpose(Var a) { return a.graph->push(unary(Op::Transpose, a)); }

Var affine(Var x, Var w, Var b) {
  if (x.cols() != w.cols()) shape_fail("affine (x, W)", x.value(), w.value());
  if (b.rows() != 1 || b.cols() != w.rows()) shape_fail("affine (W, b)", w.value(), b.value());
  auto n = binary(Op::Affine, x, w);
  n.i0 = b.id;
  return x.graph->push(std::move(n));
}

Var tanh(Var a) { return a.graph->push(unary(Op::Tanh, a)); }
Var leaky_relu(Var a, double slope) { return a.graph->push(unary(Op::LeakyRelu, a, slope)); }
Var sigmoid(Var a) { return a.graph->push(unary(Op::Sigmoid, a)); }
Var softplus(Var a) { return a.graph->push(unary(Op::Softplus, a)); }
Var exp(Var a) { return a.graph->push(unary(Op::Exp, a)); }
Var log(Var a) { return a.graph->push(unary(Op::Log, a)); }
Var square(Var a) { return a.graph->push(unary(Op::Square, a)); }
Var sqrt(Var a) { return a.graph->push(unary(Op::Sqrt, a)); }
Var safe_recip(Var a) { return a.graph->push(unary(Op::SafeRecip, a)); }

Var broadcast(Var a, Eigen::Index rows, Eigen::Index cols) {
  const bool ok_rows = a.rows() == rows || a.rows() == 1;
  const bool ok_cols = a.cols() == cols || a.cols() == 1;
  if (!ok_rows || !ok_cols || rows < 1 || cols < 1)
    throw ShapeError("broadcast: cannot expand " + shape_str(a.value()) + " to " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  if (a.rows() == rows && a.cols() == cols) return a;
  auto n = unary(Op::Broadcast, a);
  n.i0 = rows;
  n.i1 = cols;
  return a.graph->push(std::move(n));
}

Var reduce_to(Var a, Eigen::Index rows, Eigen::Index cols) {
  const bool ok_rows = rows == a.rows() || rows == 1;
  const bool ok_cols = cols == a.cols() || cols == 1;
  if (!ok_rows || !ok_cols)
    throw ShapeError("reduce: cannot reduce " + shape_str(a.value()) + " to " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  if (a.rows() == rows && a.cols() == cols) return a;
  auto n = unary(Op::ReduceTo, a);
  n.i0 = rows;
  n.i1 = cols;
  return a.graph->push(std::move(n));
}

Var sum(Var a) { return reduce_to(a, 1, 1); }
Var mean(Var a) { return (1.0 / static_cast<double>(a.value().size())) * sum(a); }
Var sum_rows(Var a) { return reduce_to(a, 1, a.cols()); }
Var sum_cols(Var a) { return reduce_to(a, a.rows(), 1); }
Var norm2_rows(Var a) { return a.graph->push(unary(Op::Norm2Rows, a)); }

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) shape_fail("concat", a.value(), b.value());
  return a.graph->push(binary(Op::Concat, a, b));
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols())
    throw ShapeError("slice: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(a.value()));
  auto n = unary(Op::Slice, a);
  n.i0 = start;
  n.i1 = count;
  return a.graph->push(std::move(n));
}

Var pad_cols(Var a, Eigen::Index left, Eigen::Index cols) {
  if (left < 0 || left + a.cols() > cols) throw ShapeError("pad: target too narrow");
  auto n = unary(Op::Pad, a);
  n.i0 = left;
  n.i1 = cols;
  return a.graph->push(std::move(n));
}

Var permute_cols(Var a, std::vector<Eigen::Index> perm) {
  for (auto p : perm)
    if (p < 0 || p >= a.cols()) throw ShapeError("permute: index out of range");
  auto n = unary(Op::Permute, a);
  n.index = std::move(perm);
  return a.graph->push(std::move(n));
}

Var magnitude(Var re, Var im, double eps) {
  require_same("magnitude", re, im);
  auto n = binary(Op::Magnitude, re, im);
  n.k = eps;
  return re.graph->push(std::move(n));
}

Var external(Var a, std::shared_ptr<const ExternalFunction> fn) {
  if (!fn || !fn->forward || !fn->vjp) throw ValidationError("external: incomplete function");
  auto n = unary(Op::External, a);
  n.external = std::move(fn);
  Var y = a.graph->push(std::move(n));
  if (y.rows() != a.rows() || y.cols() != y.graph->node(y.id).external->out_cols)
    throw ShapeError("external '" + y.graph->node(y.id).external->name + "' returned wrong shape");
  return y;
}

Eigen::VectorXd finite_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                           const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    xp(i) = orig + h;
    const double fp = f(xp);
    xp(i) = orig - h;
    const double fm = f(xp);
    xp(i) = orig;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace ganflow::ad
