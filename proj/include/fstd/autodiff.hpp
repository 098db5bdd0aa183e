#pragma once

// Reverse-mode differentiation over small dense tensors.
//
// Every op records its parents and a backward closure on the result node
// (unless recording is disabled with NoGradGuard). Tensor::backward() on a
// scalar runs the closures in reverse topological order, accumulating into
// the grads of every node that requires one. Parameters are leaves whose
// grads persist until ParamStore::zero_grad(); intermediate graphs die with
// their last Tensor handle.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fstd::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

/// Receives the output grad and one grad buffer per parent (empty when that
/// parent needs none); must add, not assign.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grads)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  /// Leaf that accumulates gradient.
  static Tensor leaf(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;
  std::span<const double> values() const;
  /// Direct write access; only meaningful for leaves (parameter updates, finite differences).
  std::span<double> mutable_values();
  /// Empty when the tensor has never received a gradient.
  std::span<const double> grad() const;
  bool requires_grad() const;
  double item() const;

  void zero_grad();
  /// Seeds d(this)/d(this) = 1; this must be a scalar.
  void backward() const;

  /// Same identity (shared node).
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  friend Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                        BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Builds a result node. Recording is skipped when no parent requires grad or
/// when recording is disabled on this thread.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               BackwardFn backward);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- primitives ----------------------------------------------------------

/// input [L x F_in], weights [F_out x F_in x k], bias [F_out] -> [L_out x F_out].
Tensor conv1d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride,
              int padding);
/// input [L x F] -> [L_out x F]; gradient goes to the first maximal cell of each window.
Tensor maxpool1d(const Tensor& input, int window, int stride);
/// input [n] (any shape with n elements), weights [m x n], bias [m] -> [m].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& input);

inline constexpr double kCosineEps = 1e-8;
/// <u,v> / (max(|u|,eps) * max(|v|,eps)) as a scalar tensor.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);
/// -log softmax(logits)[target], scalar.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target);
/// Sum over coordinates of smooth-L1(pred - target), scalar.
Tensor smooth_l1(const Tensor& pred, const Tensor& target);

// ---- structural helpers --------------------------------------------------

Tensor reshape(const Tensor& input, Shape shape);
/// Flat-index gather into a 1-D tensor.
Tensor gather(const Tensor& input, std::span<const std::size_t> flat_indices);
/// Packs scalar tensors into a 1-D tensor.
Tensor stack(std::span<const Tensor> scalars);
/// Flat concatenation into a 1-D tensor.
Tensor concat(std::span<const Tensor> parts);
/// Sum of scalar tensors; an empty list yields constant 0.
Tensor sum(std::span<const Tensor> scalars);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& input, double factor);
/// Sum of weights[i] * input[i] as a scalar.
Tensor weighted_sum(const Tensor& input, std::span<const double> weights);

/// Numerically stable softmax of raw values (no graph).
std::vector<double> softmax(std::span<const double> logits);

// ---- parameters ----------------------------------------------------------

/// Named parameter container. Copies are deep.
/// He-uniform gain for weights feeding a relu: bound sqrt(6 / fan_in).
inline const double kReluGain = std::sqrt(6.0);

class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  /// Adds a parameter; throws ConfigError on a duplicate name.
  const Tensor& add(const std::string& name, Shape shape, std::vector<double> values);
  /// uniform(-gain*sqrt(1/fan_in), +gain*sqrt(1/fan_in)) from the given generator.
  const Tensor& add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                            std::mt19937_64& rng, double gain = 1.0);

  /// Throws ConfigError naming the parameter when absent.
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  bool contains(const std::string& name) const { return params_.contains(name); }
  std::vector<std::string> names() const;
  const std::map<std::string, Tensor>& tensors() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;

  void zero_grad();

 private:
  std::map<std::string, Tensor> params_;
};

// ---- verification --------------------------------------------------------

struct GradCheckOptions {
  double step = 1e-4;
  /// Half-width of the uniform offset applied to every input before checking.
  double jitter = 1e-2;
  /// Coordinates with a kink closer than this are skipped.
  double kink_radius = 1e-3;
  double abs_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Compares analytic gradients of fn at the (jittered) inputs with central
/// differences. A non-scalar fn output is contracted with seeded random
/// weights first. Inputs are copied; the caller's tensors are untouched.
GradCheckResult grad_check(const ScalarFn& fn, std::span<const Tensor> inputs, std::uint64_t seed,
                           const GradCheckOptions& options = {});

/// Finite-difference check of d(loss)/d(params) over every parameter value.
/// `loss` is re-evaluated after each perturbation of `params`.
GradCheckResult grad_check_params(const std::function<Tensor()>& loss, ParamStore& params,
                                  const GradCheckOptions& options = {});

}  // namespace fstd::ad
