#ifndef PNET_NETWORK_HPP
#define PNET_NETWORK_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pnet/layers.hpp"
#include "pnet/rng.hpp"
#include "pnet/tensor.hpp"

namespace pnet {

enum class PoolMode { none, floor, ceil };

struct ConvLayerSpec {
  std::size_t channels = 32;
  std::size_t filter = 3;
  PoolMode pool = PoolMode::none;
};

// Declarative layer plan for the two-branch pair network: a tied
// convolutional trunk on each input, a cross-input neighborhood
// difference joining the branches, a patch summary convolution, a tail
// of further conv/pool layers, and a fully-connected classifier ending
// in a 2-way head.
struct NetworkConfig {
  std::size_t input_height = 160;
  std::size_t input_width = 60;
  std::size_t input_channels = 3;
  std::vector<ConvLayerSpec> trunk;
  std::size_t neighborhood = 3;
  std::size_t summary_channels = 32;
  std::vector<ConvLayerSpec> tail;
  std::vector<std::size_t> fc_sizes;
  double activation_scale = 1.5;
  double dropout_rate = 0.5;

  // The published 160x60 configuration.
  static NetworkConfig canonical();
  // Desk-scale 40x20 configuration used by tests and gradient checks.
  static NetworkConfig tiny();

  bool operator==(const NetworkConfig&) const = default;
};

inline bool operator==(const ConvLayerSpec& a, const ConvLayerSpec& b) {
  return a.channels == b.channels && a.filter == b.filter && a.pool == b.pool;
}

struct ShapeEntry {
  std::string name;
  Shape extents;
  bool operator==(const ShapeEntry&) const = default;
};

using ShapePlan = std::vector<ShapeEntry>;

// Every intermediate shape of the network, input through logits.
// Throws ConfigError naming the first layer whose extents collapse.
ShapePlan plan_shapes(const NetworkConfig& cfg);

// Ordered (name, shape) list of every learnable tensor.
std::vector<std::pair<std::string, Shape>> plan_parameters(const NetworkConfig& cfg);

// Named learnable tensors with paired gradient buffers. Both branches
// of the network reference the same entries: the trunk weights are tied.
template <typename S>
class ParameterStoreT {
 public:
  struct Entry {
    std::string name;
    TensorT<S> value;
    TensorT<S> grad;
  };

  void add(const std::string& name, TensorT<S> value) {
    if (index_.count(name)) throw UsageError("parameter '" + name + "' already registered");
    index_[name] = entries_.size();
    Entry e;
    e.name = name;
    e.grad = TensorT<S>(value.shape());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  TensorT<S>& value(const std::string& name) { return entry(name).value; }
  const TensorT<S>& value(const std::string& name) const { return entry(name).value; }
  TensorT<S>& grad(const std::string& name) { return entry(name).grad; }
  const TensorT<S>& grad(const std::string& name) const { return entry(name).grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(S(0));
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <typename T>
  ParameterStoreT<T> cast() const {
    ParameterStoreT<T> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<T>());
    return out;
  }

 private:
  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParameterStore = ParameterStoreT<float>;

// Cross-input neighborhood difference. Block (x,y) of the output holds
// f(x,y) broadcast over n x n minus the n x n neighborhood of h centered
// at (x,y); neighbors outside the grid contribute zero. One-directional:
// only f-minus-neighborhood-of-h is produced, the sampler randomizes
// branch order instead.
template <typename S>
TensorT<S> neighborhood_difference(const TensorT<S>& f, const TensorT<S>& h, std::size_t n) {
  require_same_shape(f, h, "neighborhood_difference");
  if (f.rank() != 3) {
    throw ShapeError("neighborhood_difference: inputs must be [H,W,C], got " + shape_str(f.shape()));
  }
  if (n % 2 == 0 || n == 0) {
    throw ArgumentError("neighborhood_difference: n must be odd, got " + std::to_string(n));
  }
  const std::size_t hf = f.shape()[0], wf = f.shape()[1], c = f.shape()[2];
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(n / 2);
  TensorT<S> out({hf * n, wf * n, c});
  for (std::size_t x = 0; x < hf; ++x) {
    for (std::size_t y = 0; y < wf; ++y) {
      for (std::size_t u = 0; u < n; ++u) {
        const std::ptrdiff_t hx = static_cast<std::ptrdiff_t>(x + u) - r;
        for (std::size_t v = 0; v < n; ++v) {
          const std::ptrdiff_t hy = static_cast<std::ptrdiff_t>(y + v) - r;
          const bool inside = hx >= 0 && hx < static_cast<std::ptrdiff_t>(hf) && hy >= 0 &&
                              hy < static_cast<std::ptrdiff_t>(wf);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const S neighbor = inside ? h(static_cast<std::size_t>(hx), static_cast<std::size_t>(hy), ch)
                                      : S(0);
            out(x * n + u, y * n + v, ch) = f(x, y, ch) - neighbor;
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
std::pair<TensorT<S>, TensorT<S>> neighborhood_difference_backward(const TensorT<S>& grad_out,
                                                                   const Shape& input_shape,
                                                                   std::size_t n) {
  if (grad_out.rank() != 3 || input_shape.size() != 3 ||
      grad_out.shape()[0] != input_shape[0] * n || grad_out.shape()[1] != input_shape[1] * n ||
      grad_out.shape()[2] != input_shape[2]) {
    throw ShapeError("neighborhood_difference_backward: grad " + shape_str(grad_out.shape()) +
                     " does not match inputs " + shape_str(input_shape) + " with n=" + std::to_string(n));
  }
  const std::size_t hf = input_shape[0], wf = input_shape[1], c = input_shape[2];
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(n / 2);
  TensorT<S> grad_f(input_shape);
  TensorT<S> grad_h(input_shape);
  for (std::size_t x = 0; x < hf; ++x) {
    for (std::size_t y = 0; y < wf; ++y) {
      for (std::size_t u = 0; u < n; ++u) {
        const std::ptrdiff_t hx = static_cast<std::ptrdiff_t>(x + u) - r;
        for (std::size_t v = 0; v < n; ++v) {
          const std::ptrdiff_t hy = static_cast<std::ptrdiff_t>(y + v) - r;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const S g = grad_out(x * n + u, y * n + v, ch);
            grad_f(x, y, ch) += g;
            if (hx >= 0 && hx < static_cast<std::ptrdiff_t>(hf) && hy >= 0 &&
                hy < static_cast<std::ptrdiff_t>(wf)) {
              grad_h(static_cast<std::size_t>(hx), static_cast<std::size_t>(hy), ch) -= g;
            }
          }
        }
      }
    }
  }
  return {std::move(grad_f), std::move(grad_h)};
}

// Learned n x n stride-n convolution collapsing each difference block to
// one value per output channel, followed by the scaled tanh.
template <typename S>
TensorT<S> patch_summary(const TensorT<S>& d, const ConvParams<S>& p, S activation_scale) {
  if (p.filter_h() != p.filter_w() || p.stride != p.filter_h()) {
    throw ArgumentError("patch_summary: filter must be n x n with stride n");
  }
  if (d.rank() != 3 || d.shape()[0] % p.stride != 0 || d.shape()[1] % p.stride != 0) {
    throw ShapeError("patch_summary: spatial extents of " + shape_str(d.shape()) +
                     " not divisible by block size " + std::to_string(p.stride));
  }
  return scaled_tanh_forward(conv2d_forward(d, p), activation_scale);
}

template <typename S>
struct BranchCache {
  std::vector<TensorT<S>> conv_in;                      // input to each trunk conv
  std::vector<TensorT<S>> act_out;                      // tanh output per trunk conv
  std::vector<std::optional<MaxPoolResult<S>>> pools;   // per layer, when pooled
  TensorT<S> out;
};

template <typename S>
struct PairCache {
  bool train = false;
  BranchCache<S> branch_a, branch_b;
  TensorT<S> diff_out;
  TensorT<S> summary_act;
  std::vector<TensorT<S>> tail_conv_in;
  std::vector<TensorT<S>> tail_act_out;
  std::vector<std::optional<MaxPoolResult<S>>> tail_pools;
  Shape tail_out_shape;
  std::vector<TensorT<S>> fc_in;
  std::vector<TensorT<S>> fc_act;
  std::vector<TensorT<S>> drop_mask;
  TensorT<S> head_in;
};

template <typename S>
struct PairForward {
  TensorT<S> logits;
  PairCache<S> cache;
};

template <typename S>
struct BuiltNetwork {
  ParameterStoreT<S> params;
  ShapePlan plan;
};

namespace detail {

inline std::string trunk_conv_name(std::size_t i) { return "conv" + std::to_string(i); }
inline std::string tail_conv_name(const NetworkConfig& cfg, std::size_t i) {
  return "conv" + std::to_string(cfg.trunk.size() + i);
}
inline std::string fc_name(std::size_t i) { return "fc" + std::to_string(i + 1); }

template <typename S>
ConvParams<S> conv_params(const ParameterStoreT<S>& store, const std::string& name,
                          std::size_t stride = 1) {
  ConvParams<S> p;
  p.weights = store.value(name + ".weights");
  p.bias = store.value(name + ".bias");
  p.stride = stride;
  return p;
}

// Uniform +/- sqrt(6 / (fanIn + fanOut)); biases stay zero.
template <typename S>
TensorT<S> glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  TensorT<S> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace detail

template <typename S>
ParameterStoreT<S> init_parameters(const NetworkConfig& cfg, Rng& rng) {
  ParameterStoreT<S> store;
  for (const auto& [name, shape] : plan_parameters(cfg)) {
    if (name.ends_with(".bias")) {
      store.add(name, TensorT<S>(shape));
    } else if (shape.size() == 4) {
      const std::size_t fan_in = shape[1] * shape[2] * shape[3];
      const std::size_t fan_out = shape[0] * shape[2] * shape[3];
      store.add(name, detail::glorot_uniform<S>(shape, fan_in, fan_out, rng));
    } else {
      store.add(name, detail::glorot_uniform<S>(shape, shape[1], shape[0], rng));
    }
  }
  return store;
}

// Validates the derived shape plan, then initializes all parameters.
template <typename S>
BuiltNetwork<S> build_network(const NetworkConfig& cfg, Rng& rng) {
  BuiltNetwork<S> net;
  net.plan = plan_shapes(cfg);
  net.params = init_parameters<S>(cfg, rng);
  return net;
}

namespace detail {

template <typename S>
TensorT<S> branch_forward(const ParameterStoreT<S>& params, const NetworkConfig& cfg,
                          const TensorT<S>& img, BranchCache<S>& cache) {
  const Shape expect{cfg.input_height, cfg.input_width, cfg.input_channels};
  if (img.shape() != expect) {
    throw ShapeError("forward_pair: image " + shape_str(img.shape()) + " does not match configured " +
                     shape_str(expect));
  }
  TensorT<S> x = img;
  cache.conv_in.clear();
  cache.act_out.clear();
  cache.pools.assign(cfg.trunk.size(), std::nullopt);
  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    cache.conv_in.push_back(x);
    ConvParams<S> p = conv_params(params, trunk_conv_name(i));
    TensorT<S> y = scaled_tanh_forward(conv2d_forward(x, p), static_cast<S>(cfg.activation_scale));
    cache.act_out.push_back(y);
    if (cfg.trunk[i].pool != PoolMode::none) {
      PoolSpec spec{cfg.trunk[i].pool == PoolMode::ceil ? PoolRounding::ceil : PoolRounding::floor};
      cache.pools[i] = maxpool_forward(y, spec);
      x = cache.pools[i]->output;
    } else {
      x = std::move(y);
    }
  }
  cache.out = x;
  return x;
}

template <typename S>
void branch_backward(ParameterStoreT<S>& params, const NetworkConfig& cfg,
                     const BranchCache<S>& cache, TensorT<S> grad) {
  for (std::size_t ii = cfg.trunk.size(); ii-- > 0;) {
    if (cache.pools[ii]) {
      grad = maxpool_backward(cache.pools[ii]->argmax, cache.pools[ii]->input_shape, grad);
    }
    grad = scaled_tanh_backward(cache.act_out[ii], grad, static_cast<S>(cfg.activation_scale));
    ConvParams<S> p = conv_params(params, trunk_conv_name(ii));
    ConvGrads<S> g = conv2d_backward(cache.conv_in[ii], p, grad);
    add_in_place(params.grad(trunk_conv_name(ii) + ".weights"), g.weights);
    add_in_place(params.grad(trunk_conv_name(ii) + ".bias"), g.bias);
    grad = std::move(g.input);
  }
}

}  // namespace detail

// Runs both branches through the tied trunk, crosses them with the
// neighborhood difference, and evaluates the joint tail down to 2 logits.
// The cache retains every intermediate backward_pair needs.
template <typename S>
PairForward<S> forward_pair(const ParameterStoreT<S>& params, const NetworkConfig& cfg,
                            const TensorT<S>& img_a, const TensorT<S>& img_b, LayerMode mode,
                            Rng& rng) {
  PairForward<S> fwd;
  PairCache<S>& cache = fwd.cache;
  cache.train = mode == LayerMode::train;

  TensorT<S> fa = detail::branch_forward(params, cfg, img_a, cache.branch_a);
  TensorT<S> fb = detail::branch_forward(params, cfg, img_b, cache.branch_b);

  cache.diff_out = neighborhood_difference(fa, fb, cfg.neighborhood);

  ConvParams<S> summary = detail::conv_params(params, "summary", cfg.neighborhood);
  cache.summary_act = patch_summary(cache.diff_out, summary, static_cast<S>(cfg.activation_scale));

  TensorT<S> x = cache.summary_act;
  cache.tail_conv_in.clear();
  cache.tail_act_out.clear();
  cache.tail_pools.assign(cfg.tail.size(), std::nullopt);
  for (std::size_t i = 0; i < cfg.tail.size(); ++i) {
    cache.tail_conv_in.push_back(x);
    ConvParams<S> p = detail::conv_params(params, detail::tail_conv_name(cfg, i));
    TensorT<S> y = scaled_tanh_forward(conv2d_forward(x, p), static_cast<S>(cfg.activation_scale));
    cache.tail_act_out.push_back(y);
    if (cfg.tail[i].pool != PoolMode::none) {
      PoolSpec spec{cfg.tail[i].pool == PoolMode::ceil ? PoolRounding::ceil : PoolRounding::floor};
      cache.tail_pools[i] = maxpool_forward(y, spec);
      x = cache.tail_pools[i]->output;
    } else {
      x = std::move(y);
    }
  }
  cache.tail_out_shape = x.shape();
  x = x.reshaped({x.size()});

  cache.fc_in.clear();
  cache.fc_act.clear();
  cache.drop_mask.clear();
  for (std::size_t i = 0; i < cfg.fc_sizes.size(); ++i) {
    cache.fc_in.push_back(x);
    const std::string name = detail::fc_name(i);
    TensorT<S> y = fc_forward(x, params.value(name + ".weights"), params.value(name + ".bias"));
    y = scaled_tanh_forward(y, static_cast<S>(cfg.activation_scale));
    cache.fc_act.push_back(y);
    // dropout regularizes every fc activation except the last
    if (i + 1 < cfg.fc_sizes.size()) {
      DropoutResult<S> d = dropout_forward(y, cfg.dropout_rate, mode, rng);
      if (cache.train) cache.drop_mask.push_back(d.mask);
      x = std::move(d.output);
    } else {
      x = std::move(y);
    }
  }

  cache.head_in = x;
  fwd.logits = fc_forward(x, params.value("head.weights"), params.value("head.bias"));
  return fwd;
}

// Accumulates dLoss/dParam into every gradient buffer; tied trunk
// parameters receive contributions from both branches. `sabotage`
// deliberately mis-scales one backward formula so gradient checking can
// demonstrate its own sensitivity.
template <typename S>
void backward_pair(ParameterStoreT<S>& params, const NetworkConfig& cfg, const PairCache<S>& cache,
                   const TensorT<S>& grad_logits, bool sabotage = false) {
  if (!cache.train) {
    throw UsageError("backward_pair: cache must come from a train-mode forward_pair");
  }
  if (grad_logits.rank() != 1 || grad_logits.shape()[0] != 2) {
    throw ShapeError("backward_pair: grad_logits must be [2], got " + shape_str(grad_logits.shape()));
  }

  FcGrads<S> hg = fc_backward(cache.head_in, params.value("head.weights"), grad_logits);
  add_in_place(params.grad("head.weights"), hg.weights);
  add_in_place(params.grad("head.bias"), hg.bias);
  TensorT<S> grad = std::move(hg.input);

  for (std::size_t ii = cfg.fc_sizes.size(); ii-- > 0;) {
    if (ii + 1 < cfg.fc_sizes.size()) {
      grad = dropout_backward(cache.drop_mask[ii], cfg.dropout_rate, grad);
    }
    grad = scaled_tanh_backward(cache.fc_act[ii], grad, static_cast<S>(cfg.activation_scale));
    const std::string name = detail::fc_name(ii);
    FcGrads<S> g = fc_backward(cache.fc_in[ii], params.value(name + ".weights"), grad);
    add_in_place(params.grad(name + ".weights"), g.weights);
    add_in_place(params.grad(name + ".bias"), g.bias);
    grad = std::move(g.input);
  }

  grad = grad.reshaped(cache.tail_out_shape);
  for (std::size_t ii = cfg.tail.size(); ii-- > 0;) {
    if (cache.tail_pools[ii]) {
      grad = maxpool_backward(cache.tail_pools[ii]->argmax, cache.tail_pools[ii]->input_shape, grad);
    }
    grad = scaled_tanh_backward(cache.tail_act_out[ii], grad, static_cast<S>(cfg.activation_scale));
    const std::string name = detail::tail_conv_name(cfg, ii);
    ConvParams<S> p = detail::conv_params(params, name);
    ConvGrads<S> g = conv2d_backward(cache.tail_conv_in[ii], p, grad);
    add_in_place(params.grad(name + ".weights"), g.weights);
    add_in_place(params.grad(name + ".bias"), g.bias);
    grad = std::move(g.input);
  }

  grad = scaled_tanh_backward(cache.summary_act, grad, static_cast<S>(cfg.activation_scale));
  if (sabotage) scale_in_place(grad, S(1.01));
  ConvParams<S> summary = detail::conv_params(params, "summary", cfg.neighborhood);
  ConvGrads<S> sg = conv2d_backward(cache.diff_out, summary, grad);
  add_in_place(params.grad("summary.weights"), sg.weights);
  add_in_place(params.grad("summary.bias"), sg.bias);

  auto [grad_fa, grad_fb] =
      neighborhood_difference_backward(sg.input, cache.branch_a.out.shape(), cfg.neighborhood);
  detail::branch_backward(params, cfg, cache.branch_a, std::move(grad_fa));
  detail::branch_backward(params, cfg, cache.branch_b, std::move(grad_fb));
}

}  // namespace pnet

#endif
