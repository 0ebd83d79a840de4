#pragma once

// Reverse-mode differentiation over dense rank-2 f64 tensors.
//
// A Graph is an append-only list of nodes. Values are computed eagerly when a
// node is created and can be recomputed for new input bindings with
// evaluate(). Every backward rule is written in terms of graph operations, so
// the adjoint of an output is itself a node that can be differentiated again
// (this is what the WGAN-GP penalty needs).

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "ganflow/param_vector.hpp"

namespace ganflow::ad {

using Tensor = Eigen::MatrixXd;

enum class Op : std::uint8_t {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  MatMul,
  Transpose,
  Affine,
  Tanh,
  LeakyRelu,
  LeakyMask,
  Sigmoid,
  Softplus,
  Exp,
  Log,
  Square,
  Sqrt,
  SafeRecip,
  Broadcast,
  ReduceTo,
  Norm2Rows,
  Concat,
  Slice,
  Pad,
  Permute,
  Magnitude,
  External,
  ExternalVjp,
};

std::string_view op_name(Op op);

/// Row-wise black-box map with a vector-Jacobian product. Its adjoint is not
/// itself differentiable, so it supports gradient() but not double backprop.
struct ExternalFunction {
  std::string name;
  Eigen::Index out_cols = 0;
  std::function<Tensor(const Tensor&)> forward;
  /// (input, upstream adjoint) -> adjoint w.r.t. input
  std::function<Tensor(const Tensor&, const Tensor&)> vjp;
};

class Graph;

/// Handle to a node. Cheap to copy; only valid while its Graph is alive and
/// not truncated below its id.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const;
  [[nodiscard]] bool valid() const { return graph != nullptr && id >= 0; }
};

using Bindings = std::unordered_map<std::string, Var>;

class Graph {
 public:
  struct Node {
    Op op = Op::Constant;
    int a = -1;
    int b = -1;
    double k = 0.0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    std::string name;
    std::vector<Eigen::Index> index;
    std::shared_ptr<const ExternalFunction> external;
    Tensor value;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Named leaf; rebound by evaluate() from the ParamVector segment of the
  /// same name. Names are unique within a graph.
  Var input(const std::string& name, Tensor value);
  Var constant(Tensor value);
  Var scalar(double v);

  /// One Input leaf per segment of `params`.
  Bindings bind_inputs(const ParamVector& params);
  /// One Constant leaf per segment (frozen parameters).
  Bindings bind_constants(const ParamVector& params);

  /// Rebinds every Input from `inputs` and recomputes all values in order.
  /// Throws ValidationError if an Input has no segment, NumericalError on a
  /// non-finite intermediate (the message carries the node index).
  const Tensor& evaluate(const ParamVector& inputs, Var output);

  /// d(output)/d(input leaf) for each requested input name. Output must be
  /// 1x1. Inputs that do not influence the output get zero segments.
  ParamVector gradient(Var output, std::span<const std::string> wrt);
  /// Convenience: evaluate() with `inputs`, then gradient().
  ParamVector gradient(const ParamVector& inputs, Var output,
                       std::span<const std::string> wrt);

  /// Numeric adjoints of a 1x1 output with respect to arbitrary nodes. The
  /// graph is left unchanged.
  std::vector<Tensor> adjoint_values(Var output, std::span<const Var> wrt);

  /// Emits nodes computing d(output)/d(wrt) for each wrt node and returns them.
  /// The returned nodes are ordinary graph nodes and can be differentiated.
  std::vector<Var> adjoints(Var output, std::span<const Var> wrt);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] bool has_input(const std::string& name) const {
    return inputs_.count(name) != 0;
  }
  [[nodiscard]] Var input_var(const std::string& name);

  // Used by the free op functions below.
  Var push(Node node);

 private:
  friend struct Var;

  Tensor compute(const Node& n) const;
  void check_finite(int id) const;
  void truncate(std::size_t n);
  std::vector<int> emit_adjoints(int output, std::span<const int> wrt);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> inputs_;
};

/// d(output)/d(wrt) as a differentiable node (double backprop).
Var gradient_as_nodes(Var output, Var wrt);

// Elementwise arithmetic; shapes must match exactly (use broadcast()).
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double k, Var a);
Var operator*(Var a, double k);
Var operator+(Var a, double k);
Var operator+(double k, Var a);
Var operator-(Var a, double k);
Var operator-(double k, Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);
/// x W^T + b with x: n x in, W: out x in, b: 1 x out.
Var affine(Var x, Var w, Var b);
Var tanh(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
/// 1/a, with 0 mapped to 0.
Var safe_recip(Var a);
/// Replicates a (1x1, 1xc or rx1) to rows x cols.
Var broadcast(Var a, Eigen::Index rows, Eigen::Index cols);
/// Sums a down to rows x cols where rows in {1, a.rows} and cols in {1, a.cols}.
Var reduce_to(Var a, Eigen::Index rows, Eigen::Index cols);
Var sum(Var a);
Var mean(Var a);
/// n x c -> 1 x c
Var sum_rows(Var a);
/// n x c -> n x 1
Var sum_cols(Var a);
/// n x c -> n x 1 Euclidean norm of each row.
Var norm2_rows(Var a);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// Embeds a into zero columns: `left` zeros before, total width `cols`.
Var pad_cols(Var a, Eigen::Index left, Eigen::Index cols);
/// y(:, j) = a(:, perm[j])
Var permute_cols(Var a, std::vector<Eigen::Index> perm);
/// Exact elementwise sqrt(re^2 + im^2); the adjoint uses sqrt(re^2+im^2+eps).
Var magnitude(Var re, Var im, double eps = 1e-12);
Var external(Var a, std::shared_ptr<const ExternalFunction> fn);

/// Central finite differences of a scalar function of a flat vector.
Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double h = 1e-5);

}  // namespace ganflow::ad
