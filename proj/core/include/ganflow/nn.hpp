#pragma once

// Fully connected networks stored as named segments of a ParamVector:
// <prefix>.w<k> (out x in) and <prefix>.b<k> (1 x out), y = x W^T + b.

#include <string>
#include <vector>

#include "ganflow/autodiff.hpp"
#include "ganflow/param_vector.hpp"
#include "ganflow/rng.hpp"

namespace ganflow::nn {

enum class Activation { Identity, Tanh, LeakyRelu };

struct Mlp {
  std::string prefix;
  /// Layer sizes including input and output, e.g. {5, 64, 256, 256}.
  std::vector<Eigen::Index> widths;
  Activation hidden = Activation::LeakyRelu;
  Activation output = Activation::Identity;

  [[nodiscard]] std::size_t layers() const { return widths.size() - 1; }
  [[nodiscard]] std::string weight(std::size_t k) const { return prefix + ".w" + std::to_string(k); }
  [[nodiscard]] std::string bias(std::size_t k) const { return prefix + ".b" + std::to_string(k); }

  /// Gaussian weights with variance gain^2 / fan_in, zero biases.
  void init(ParamVector& params, Rng& rng, double gain = 1.0) const;
  [[nodiscard]] ad::Var forward(const ad::Bindings& p, ad::Var x) const;
  [[nodiscard]] Eigen::MatrixXd forward(const ParamVector& p, const Eigen::MatrixXd& x) const;
};

}  // namespace ganflow::nn
