#pragma once

// Bijections on the latent space with exact log-Jacobians: planar layers,
// activation normalization, fixed permutations and affine coupling layers,
// composed into a FlowModel whose parameters live in a single ParamVector.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ganflow/autodiff.hpp"
#include "ganflow/param_vector.hpp"
#include "ganflow/rng.hpp"

namespace ganflow::flows {

using Tensor = Eigen::MatrixXd;

enum class LayerKind { Planar, ActNorm, Permutation, Coupling };

std::string kind_name(LayerKind k);
LayerKind parse_kind(const std::string& name);

/// u_hat = u + (m(w.u) - w.u) w / |w|^2 with m(a) = -1 + softplus(a), so
/// w.u_hat > -1. Throws ValidationError when |w| < 1e-12.
ad::Var planar_constrain(ad::Var u, ad::Var w);
Eigen::RowVectorXd planar_constrain(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& w);

struct Layer {
  LayerKind kind = LayerKind::Planar;
  std::string prefix;  // parameter name prefix, "f<index>"
  /// Permutation: y(:, j) = x(:, perm[j]).
  /// Coupling: perm[0, n_a) is partition a, perm[n_a, n) is partition b.
  std::vector<Eigen::Index> perm;
  Eigen::Index n_a = 0;
  std::vector<Eigen::Index> hidden;  // coupling net hidden widths
  bool initialized = true;           // actnorm data-dependent init done

  [[nodiscard]] std::string param(const std::string& name) const { return prefix + "." + name; }
};

/// Result of a graph forward pass: y plus an n x 1 log-determinant per layer.
struct FlowVars {
  ad::Var y;
  ad::Var logdet;
  std::vector<ad::Var> layer_logdets;
};

struct FlowValues {
  Tensor y;
  Eigen::VectorXd logdet;
  std::vector<Eigen::VectorXd> layer_logdets;
};

class FlowModel {
 public:
  FlowModel() = default;
  explicit FlowModel(Eigen::Index n_z);

  /// Comma-separated `kind[:count]` items; kinds planar, actnorm, permute,
  /// coupling, where each coupling item is an actnorm followed by a coupling
  /// layer with its own random partition. "" or "identity" is the empty flow.
  static FlowModel from_spec(const std::string& spec, Eigen::Index n_z, std::uint64_t seed);

  /// Planar parameters are drawn N(0, init_sd^2).
  void add_planar(Rng& rng, double init_sd = 0.1);
  void add_actnorm();
  void add_permutation(Rng& rng);
  /// Default hidden widths {2 n_z, 2 n_z}. Rescaling gains start at 0, so the
  /// new layer is the identity map whatever the net weights.
  void add_coupling(Rng& rng, std::vector<Eigen::Index> hidden = {});
  /// Coupling layer with an explicit partition (a then b).
  void add_coupling(Rng& rng, std::vector<Eigen::Index> partition, Eigen::Index n_a,
                    std::vector<Eigen::Index> hidden = {});

  [[nodiscard]] Eigen::Index n_z() const { return n_z_; }
  [[nodiscard]] std::size_t n_layers() const { return layers_.size(); }
  [[nodiscard]] const std::vector<Layer>& layers() const { return layers_; }
  [[nodiscard]] const ParamVector& params() const { return params_; }
  [[nodiscard]] ParamVector& params() { return params_; }
  [[nodiscard]] const std::string& spec() const { return spec_; }
  [[nodiscard]] bool initialized() const;
  [[nodiscard]] bool invertible() const;

  /// Data-dependent actnorm init: every uninitialized actnorm layer takes the
  /// per-dimension mean and (population) std of its input on this batch.
  void actnorm_init(const Tensor& z);

  [[nodiscard]] FlowVars forward(const ad::Bindings& p, ad::Var z) const;
  [[nodiscard]] FlowValues forward(const Tensor& z) const;
  /// Exact inverse; throws ValidationError if the flow has planar layers.
  [[nodiscard]] Tensor inverse(const Tensor& y) const;

  /// GFPARAMS payload plus a TOML sidecar (layer list, partitions, init state).
  void save(const std::filesystem::path& path) const;
  static FlowModel load(const std::filesystem::path& path);

 private:
  Layer& push(LayerKind kind);

  Eigen::Index n_z_ = 0;
  std::string spec_;
  std::vector<Layer> layers_;
  ParamVector params_;
};

}  // namespace ganflow::flows
