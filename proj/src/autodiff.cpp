#include "fstd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "fstd/error.hpp"
#include "fstd/kernels.hpp"

namespace fstd::ad {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  bool requires_grad = false;
  bool is_leaf = true;
};

namespace {

thread_local bool t_grad_enabled = true;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  require(ad::numel(shape) == values.size(),
          "tensor: shape " + shape_str(shape) + " does not match " +
              std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->grad.assign(t.node_->values.size(), 0.0);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->values.size(); }
std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
  require(numel() == 1, "item(): tensor " + shape_str(shape()) + " is not a scalar");
  return node_->values[0];
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require(numel() == 1, "backward(): root " + shape_str(shape()) + " is not a scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.contains(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->values.size(), 0.0);
  }
  node_->grad[0] += 1.0;

  std::vector<std::span<double>> grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf || !n->backward) continue;
    grads.clear();
    for (const auto& p : n->parents) {
      grads.push_back(p->requires_grad ? std::span<double>(p->grad) : std::span<double>());
    }
    n->backward(n->grad, grads);
  }
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
               BackwardFn backward) {
  require(ad::numel(shape) == values.size(),
          "op: shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
              " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
  if (t_grad_enabled && any) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->backward = std::move(backward);
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(std::move(p.node_));
  }
  return Tensor(std::move(n));
}

// ---- primitives ----------------------------------------------------------

Tensor conv1d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride,
              int padding) {
  require(input.shape().size() == 2, "conv1d: input must be [L x F_in], got " +
                                         shape_str(input.shape()));
  require(weights.shape().size() == 3, "conv1d: weights must be [F_out x F_in x k], got " +
                                           shape_str(weights.shape()));
  const std::size_t k = weights.dim(2);
  require(k % 2 == 1, "conv1d: kernel size k=" + std::to_string(k) + " must be odd");
  require(weights.dim(1) == input.dim(1),
          "conv1d: F_in mismatch, input has " + std::to_string(input.dim(1)) +
              " channels, weights expect " + std::to_string(weights.dim(1)));
  require(bias.numel() == weights.dim(0),
          "conv1d: F_out mismatch, bias has " + std::to_string(bias.numel()) +
              " entries, weights have " + std::to_string(weights.dim(0)));
  require(stride >= 1 && padding >= 0, "conv1d: stride must be >= 1 and padding >= 0");

  kernels::Conv1dShape s{input.dim(0), input.dim(1), weights.dim(0), k,
                         static_cast<std::size_t>(stride), static_cast<std::size_t>(padding)};
  const std::size_t lo = s.out_length();
  require(lo >= 1, "conv1d: L=" + std::to_string(s.length) + " too short for k=" +
                       std::to_string(k) + " with padding " + std::to_string(padding));
  std::vector<double> out(lo * s.out_channels);
  kernels::omp::conv1d_forward(s, input.values(), weights.values(), bias.values(), out);

  return make_op({lo, s.out_channels}, std::move(out), {input, weights, bias},
                 [s, input, weights](std::span<const double> g, std::span<const std::span<double>> gr) {
                   kernels::omp::conv1d_backward(s, input.values(), weights.values(), g, gr[0],
                                                 gr[1], gr[2]);
                 });
}

Tensor maxpool1d(const Tensor& input, int window, int stride) {
  require(input.shape().size() == 2, "maxpool1d: input must be [L x F], got " +
                                         shape_str(input.shape()));
  require(window >= 1 && stride >= 1, "maxpool1d: window and stride must be >= 1");
  require(static_cast<std::size_t>(window) <= input.dim(0),
          "maxpool1d: window " + std::to_string(window) + " exceeds L=" +
              std::to_string(input.dim(0)));
  kernels::PoolShape s{input.dim(0), input.dim(1), static_cast<std::size_t>(window),
                       static_cast<std::size_t>(stride)};
  const std::size_t lo = s.out_length();
  std::vector<double> out(lo * s.channels);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  kernels::omp::maxpool1d_forward(s, input.values(), out, *argmax);
  return make_op({lo, s.channels}, std::move(out), {input},
                 [argmax](std::span<const double> g, std::span<const std::span<double>> gr) {
                   for (std::size_t i = 0; i < g.size(); ++i) gr[0][(*argmax)[i]] += g[i];
                 });
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(weights.shape().size() == 2,
          "dense: weights must be [m x n], got " + shape_str(weights.shape()));
  const std::size_t m = weights.dim(0);
  const std::size_t n = weights.dim(1);
  require(input.numel() == n, "dense: input has " + std::to_string(input.numel()) +
                                  " values, weights expect n=" + std::to_string(n));
  require(bias.numel() == m, "dense: bias has " + std::to_string(bias.numel()) +
                                 " values, weights expect m=" + std::to_string(m));
  std::vector<double> out(m);
  kernels::omp::dense_forward(m, n, input.values(), weights.values(), bias.values(), out);
  return make_op({m}, std::move(out), {input, weights, bias},
                 [m, n, input, weights](std::span<const double> g,
                                        std::span<const std::span<double>> gr) {
                   kernels::omp::dense_backward(m, n, input.values(), weights.values(), g, gr[0],
                                                gr[1], gr[2]);
                 });
}

Tensor relu(const Tensor& input) {
  std::vector<double> out(input.numel());
  const auto x = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return make_op(input.shape(), std::move(out), {input},
                 [input](std::span<const double> g, std::span<const std::span<double>> gr) {
                   const auto x = input.values();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (x[i] > 0.0) gr[0][i] += g[i];
                   }
                 });
}

Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  require(u.numel() == v.numel(), "cosine_similarity: length mismatch " +
                                      std::to_string(u.numel()) + " vs " +
                                      std::to_string(v.numel()));
  const auto a = u.values();
  const auto b = v.values();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double da = std::max(na, kCosineEps), db = std::max(nb, kCosineEps);
  const double sim = dot / (da * db);
  return make_op({}, {sim}, {u, v},
                 [u, v, dot, na, nb, da, db](std::span<const double> g,
                                             std::span<const std::span<double>> gr) {
                   const auto a = u.values();
                   const auto b = v.values();
                   // d/da_i = b_i/(da db) - dot a_i/(da^3 db) when |a| exceeds eps.
                   const double inv = 1.0 / (da * db);
                   const double ca = na > kCosineEps ? dot / (da * da * da * db) : 0.0;
                   const double cb = nb > kCosineEps ? dot / (da * db * db * db) : 0.0;
                   for (std::size_t i = 0; i < a.size(); ++i) {
                     if (!gr[0].empty()) gr[0][i] += g[0] * (b[i] * inv - ca * a[i]);
                     if (!gr[1].empty()) gr[1][i] += g[0] * (a[i] * inv - cb * b[i]);
                   }
                 });
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& x : p) x /= z;
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  const auto x = logits.values();
  if (target >= x.size()) {
    throw ConfigError("softmax_cross_entropy: target " + std::to_string(target) +
                      " out of range for " + std::to_string(x.size()) + " classes");
  }
  const auto top = static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
  const double mx = x[top];
  double rest = 0.0;  // z - 1, kept separate so log1p stays accurate for peaked logits
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i != top) rest += std::exp(x[i] - mx);
  }
  const double loss = std::log1p(rest) - (x[target] - mx);
  return make_op({}, {loss}, {logits},
                 [logits, target](std::span<const double> g,
                                  std::span<const std::span<double>> gr) {
                   const auto p = softmax(logits.values());
                   for (std::size_t i = 0; i < p.size(); ++i) {
                     gr[0][i] += g[0] * (p[i] - (i == target ? 1.0 : 0.0));
                   }
                 });
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(), "smooth_l1: shape mismatch " +
                                              shape_str(pred.shape()) + " vs " +
                                              shape_str(target.shape()));
  const auto p = pred.values();
  const auto t = target.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - t[i];
    loss += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  return make_op({}, {loss}, {pred, target},
                 [pred, target](std::span<const double> g, std::span<const std::span<double>> gr) {
                   const auto p = pred.values();
                   const auto t = target.values();
                   for (std::size_t i = 0; i < p.size(); ++i) {
                     const double d = p[i] - t[i];
                     const double dd = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
                     if (!gr[0].empty()) gr[0][i] += g[0] * dd;
                     if (!gr[1].empty()) gr[1][i] -= g[0] * dd;
                   }
                 });
}

// ---- structural ----------------------------------------------------------

Tensor reshape(const Tensor& input, Shape shape) {
  require(numel(shape) == input.numel(), "reshape: cannot view " + shape_str(input.shape()) +
                                             " as " + shape_str(shape));
  std::vector<double> out(input.values().begin(), input.values().end());
  return make_op(std::move(shape), std::move(out), {input},
                 [](std::span<const double> g, std::span<const std::span<double>> gr) {
                   for (std::size_t i = 0; i < g.size(); ++i) gr[0][i] += g[i];
                 });
}

Tensor gather(const Tensor& input, std::span<const std::size_t> flat_indices) {
  std::vector<double> out(flat_indices.size());
  const auto x = input.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(flat_indices[i] < x.size(), "gather: index " + std::to_string(flat_indices[i]) +
                                            " out of range for " + shape_str(input.shape()));
    out[i] = x[flat_indices[i]];
  }
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  const std::size_t n = out.size();
  return make_op({n}, std::move(out), {input},
                 [idx = std::move(idx)](std::span<const double> g,
                                        std::span<const std::span<double>> gr) {
                   for (std::size_t i = 0; i < idx.size(); ++i) gr[0][idx[i]] += g[i];
                 });
}

Tensor stack(std::span<const Tensor> scalars) {
  std::vector<double> out;
  out.reserve(scalars.size());
  for (const auto& s : scalars) out.push_back(s.item());
  const std::size_t n = out.size();
  return make_op({n}, std::move(out), {scalars.begin(), scalars.end()},
                 [](std::span<const double> g, std::span<const std::span<double>> gr) {
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (!gr[i].empty()) gr[i][0] += g[i];
                   }
                 });
}

Tensor concat(std::span<const Tensor> parts) {
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  const std::size_t n = out.size();
  return make_op({n}, std::move(out), {parts.begin(), parts.end()},
                 [offsets](std::span<const double> g, std::span<const std::span<double>> gr) {
                   for (std::size_t k = 0; k < gr.size(); ++k) {
                     for (std::size_t i = 0; i < gr[k].size(); ++i) gr[k][i] += g[offsets[k] + i];
                   }
                 });
}

Tensor sum(std::span<const Tensor> scalars) {
  double total = 0.0;
  for (const auto& s : scalars) total += s.item();
  return make_op({}, {total}, {scalars.begin(), scalars.end()},
                 [](std::span<const double> g, std::span<const std::span<double>> gr) {
                   for (const auto& pg : gr) {
                     if (!pg.empty()) pg[0] += g[0];
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b},
                 [](std::span<const double> g, std::span<const std::span<double>> gr) {
                   for (const auto& pg : gr) {
                     if (pg.empty()) continue;
                     for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
                   }
                 });
}

Tensor scale(const Tensor& input, double factor) {
  std::vector<double> out(input.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.values()[i] * factor;
  return make_op(input.shape(), std::move(out), {input},
                 [factor](std::span<const double> g, std::span<const std::span<double>> gr) {
                   for (std::size_t i = 0; i < g.size(); ++i) gr[0][i] += factor * g[i];
                 });
}

Tensor weighted_sum(const Tensor& input, std::span<const double> weights) {
  require(weights.size() == input.numel(), "weighted_sum: weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * input.values()[i];
  std::vector<double> w(weights.begin(), weights.end());
  return make_op({}, {total}, {input},
                 [w = std::move(w)](std::span<const double> g,
                                    std::span<const std::span<double>> gr) {
                   for (std::size_t i = 0; i < w.size(); ++i) gr[0][i] += g[0] * w[i];
                 });
}

// ---- ParamStore ----------------------------------------------------------

ParamStore::ParamStore(const ParamStore& other) {
  for (const auto& [name, t] : other.params_) {
    params_.emplace(name, Tensor::leaf(t.shape(), {t.values().begin(), t.values().end()}));
  }
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    ParamStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

const Tensor& ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (params_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  return params_.emplace(name, Tensor::leaf(std::move(shape), std::move(values))).first->second;
}

const Tensor& ParamStore::add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                                      std::mt19937_64& rng, double gain) {
  const double bound = gain * std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return add(name, std::move(shape), std::move(v));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get_mut(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

// ---- grad check ----------------------------------------------------------

namespace {

double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Second differences scale as r^2 on smooth stretches but only linearly in r
// when a slope discontinuity lies inside the probe radius.
bool smooth_at(const std::function<double()>& eval, double& x, double radius, double f0) {
  const double saved = x;
  auto second_diff = [&](double r) {
    x = saved + r;
    const double fp = eval();
    x = saved - r;
    const double fm = eval();
    x = saved;
    return fp - 2.0 * f0 + fm;
  };
  const double wide = std::abs(second_diff(radius));
  const double noise = 1e-10 * (1.0 + std::abs(f0));
  if (wide <= noise) return true;
  const double narrow = std::abs(second_diff(0.5 * radius));
  return narrow <= 0.35 * wide;
}

void check_coordinate(const std::function<double()>& eval, double& x, double analytic, double f0,
                      const GradCheckOptions& o, GradCheckResult& r) {
  if (!smooth_at(eval, x, o.kink_radius, f0)) {
    ++r.skipped;
    return;
  }
  const double saved = x;
  x = saved + o.step;
  const double fp = eval();
  x = saved - o.step;
  const double fm = eval();
  x = saved;
  const double numeric = (fp - fm) / (2.0 * o.step);
  r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic, numeric, o.abs_floor));
  ++r.checked;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& fn, std::span<const Tensor> inputs, std::uint64_t seed,
                           const GradCheckOptions& options) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-options.jitter, options.jitter);

  std::vector<Tensor> xs;
  for (const auto& in : inputs) {
    std::vector<double> v(in.values().begin(), in.values().end());
    for (double& x : v) x += jitter(rng);
    xs.push_back(Tensor::leaf(in.shape(), std::move(v)));
  }

  std::vector<double> projection;
  auto scalar_of = [&](const Tensor& out) {
    if (out.numel() == 1) return reshape(out, {});
    if (projection.empty()) {
      std::normal_distribution<double> nd(0.0, 1.0);
      projection.resize(out.numel());
      for (double& w : projection) w = nd(rng);
    }
    return weighted_sum(out, projection);
  };

  Tensor loss = scalar_of(fn(xs));
  loss.backward();
  const double f0 = loss.item();
  std::vector<std::vector<double>> analytic;
  for (const auto& x : xs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  GradCheckResult result;
  auto eval = [&] {
    NoGradGuard guard;
    return scalar_of(fn(xs)).item();
  };
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto vals = xs[k].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      check_coordinate(eval, vals[i], analytic[k][i], f0, options, result);
    }
  }
  return result;
}

GradCheckResult grad_check_params(const std::function<Tensor()>& loss, ParamStore& params,
                                  const GradCheckOptions& options) {
  params.zero_grad();
  Tensor root = loss();
  root.backward();
  const double f0 = root.item();
  auto eval = [&] {
    NoGradGuard guard;
    return loss().item();
  };
  GradCheckResult result;
  for (const auto& name : params.names()) {
    Tensor& t = params.get_mut(name);
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto vals = t.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      check_coordinate(eval, vals[i], analytic[i], f0, options, result);
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace fstd::ad
