#include "ganflow/nn.hpp"

#include <cmath>

#include "ganflow/errors.hpp"

namespace ganflow::nn {

namespace {

ad::Var activate(ad::Var x, Activation a) {
  switch (a) {
    case Activation::Tanh: return ad::tanh(x);
    case Activation::LeakyRelu: return ad::leaky_relu(x, 0.2);
    case Activation::Identity: break;
  }
  return x;
}

void activate(Eigen::MatrixXd& x, Activation a) {
  switch (a) {
    case Activation::Tanh: x = x.array().tanh().matrix(); break;
    case Activation::LeakyRelu: x = x.unaryExpr([](double v) { return v > 0 ? v : 0.2 * v; }); break;
    case Activation::Identity: break;
  }
}

const ad::Var& lookup(const ad::Bindings& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ValidationError("network parameter '" + name + "' is not bound");
  return it->second;
}

}  // namespace

void Mlp::init(ParamVector& params, Rng& rng, double gain) const {
  if (widths.size() < 2) throw ValidationError("network '" + prefix + "' needs at least input and output widths");
  for (std::size_t k = 0; k < layers(); ++k) {
    const double sd = gain / std::sqrt(static_cast<double>(widths[k]));
    params.add(weight(k), sd * standard_normal(rng, widths[k + 1], widths[k]));
    params.add(bias(k), Eigen::MatrixXd::Zero(1, widths[k + 1]));
  }
}

ad::Var Mlp::forward(const ad::Bindings& p, ad::Var x) const {
  for (std::size_t k = 0; k < layers(); ++k) {
    x = ad::affine(x, lookup(p, weight(k)), lookup(p, bias(k)));
    x = activate(x, k + 1 == layers() ? output : hidden);
  }
  return x;
}

Eigen::MatrixXd Mlp::forward(const ParamVector& p, const Eigen::MatrixXd& x0) const {
  Eigen::MatrixXd x = x0;
  for (std::size_t k = 0; k < layers(); ++k) {
    const Eigen::MatrixXd w = p.get(weight(k));
    const Eigen::MatrixXd b = p.get(bias(k));
    if (x.cols() != w.cols()) throw ShapeError("network '" + prefix + "': input width mismatch");
    x = (x * w.transpose()).rowwise() + b.row(0);
    activate(x, k + 1 == layers() ? output : hidden);
  }
  return x;
}

}  // namespace ganflow::nn
