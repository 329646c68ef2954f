#ifndef PNET_LAYERS_HPP
#define PNET_LAYERS_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "pnet/rng.hpp"
#include "pnet/tensor.hpp"

namespace pnet {

// Activations are [H,W,C] row-major; filters are [outC,inC,fh,fw].

template <typename S>
struct ConvParams {
  TensorT<S> weights;  // [outC, inC, fh, fw]
  TensorT<S> bias;     // [outC]
  std::size_t stride = 1;

  std::size_t out_channels() const { return weights.shape()[0]; }
  std::size_t in_channels() const { return weights.shape()[1]; }
  std::size_t filter_h() const { return weights.shape()[2]; }
  std::size_t filter_w() const { return weights.shape()[3]; }
};

template <typename S>
struct ConvGrads {
  TensorT<S> input;
  TensorT<S> weights;
  TensorT<S> bias;
};

namespace detail {

template <typename S>
void check_conv_args(const TensorT<S>& x, const ConvParams<S>& p) {
  if (x.rank() != 3) throw ShapeError("conv2d: input must be [H,W,C], got " + shape_str(x.shape()));
  if (p.weights.rank() != 4) {
    throw ShapeError("conv2d: weights must be [outC,inC,fh,fw], got " + shape_str(p.weights.shape()));
  }
  if (p.bias.rank() != 1 || p.bias.shape()[0] != p.out_channels()) {
    throw ShapeError("conv2d: bias must be [outC], got " + shape_str(p.bias.shape()));
  }
  if (p.stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (x.shape()[2] != p.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(x.shape()[2]) + " channels, filters expect " +
                     std::to_string(p.in_channels()));
  }
  if (x.shape()[0] < p.filter_h() || x.shape()[1] < p.filter_w()) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than filter " +
                     std::to_string(p.filter_h()) + "x" + std::to_string(p.filter_w()));
  }
}

}  // namespace detail

inline std::size_t conv_out_extent(std::size_t in, std::size_t filter, std::size_t stride) {
  return (in - filter) / stride + 1;
}

// Patch matrix [Ho*Wo, C*fh*fw]; column order matches the row-major
// flattening of one filter, so conv reduces to matmul_nt against weights.
template <typename S>
TensorT<S> im2col(const TensorT<S>& x, std::size_t fh, std::size_t fw, std::size_t stride) {
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const std::size_t ho = conv_out_extent(h, fh, stride);
  const std::size_t wo = conv_out_extent(w, fw, stride);
  TensorT<S> col({ho * wo, c * fh * fw});
  S* out = col.data();
  const S* in = x.data();
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      S* row = out + (i * wo + j) * c * fh * fw;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t u = 0; u < fh; ++u) {
          const S* src = in + ((i * stride + u) * w + j * stride) * c + ch;
          S* dst = row + (ch * fh + u) * fw;
          for (std::size_t v = 0; v < fw; ++v) dst[v] = src[v * c];
        }
      }
    }
  }
  return col;
}

// Scatter-add of a patch-matrix gradient back onto the input grid.
template <typename S>
TensorT<S> col2im(const TensorT<S>& col, const Shape& input_shape, std::size_t fh, std::size_t fw,
                  std::size_t stride) {
  const std::size_t h = input_shape[0], w = input_shape[1], c = input_shape[2];
  const std::size_t ho = conv_out_extent(h, fh, stride);
  const std::size_t wo = conv_out_extent(w, fw, stride);
  TensorT<S> x(input_shape);
  const S* in = col.data();
  S* out = x.data();
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      const S* row = in + (i * wo + j) * c * fh * fw;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t u = 0; u < fh; ++u) {
          S* dst = out + ((i * stride + u) * w + j * stride) * c + ch;
          const S* src = row + (ch * fh + u) * fw;
          for (std::size_t v = 0; v < fw; ++v) dst[v * c] += src[v];
        }
      }
    }
  }
  return x;
}

// Valid cross-correlation, no padding.
template <typename S>
TensorT<S> conv2d_forward(const TensorT<S>& x, const ConvParams<S>& p) {
  detail::check_conv_args(x, p);
  const std::size_t ho = conv_out_extent(x.shape()[0], p.filter_h(), p.stride);
  const std::size_t wo = conv_out_extent(x.shape()[1], p.filter_w(), p.stride);
  const std::size_t k = p.out_channels();

  TensorT<S> col = im2col(x, p.filter_h(), p.filter_w(), p.stride);
  TensorT<S> wmat = p.weights.reshaped({k, p.in_channels() * p.filter_h() * p.filter_w()});
  TensorT<S> out = matmul_nt(col, wmat);  // [Ho*Wo, K]
  S* po = out.data();
  const S* pb = p.bias.data();
  for (std::size_t r = 0; r < ho * wo; ++r) {
    for (std::size_t ch = 0; ch < k; ++ch) po[r * k + ch] += pb[ch];
  }
  return out.reshaped({ho, wo, k});
}

template <typename S>
ConvGrads<S> conv2d_backward(const TensorT<S>& x, const ConvParams<S>& p, const TensorT<S>& grad_out) {
  detail::check_conv_args(x, p);
  const std::size_t ho = conv_out_extent(x.shape()[0], p.filter_h(), p.stride);
  const std::size_t wo = conv_out_extent(x.shape()[1], p.filter_w(), p.stride);
  const std::size_t k = p.out_channels();
  if (grad_out.shape() != Shape{ho, wo, k}) {
    throw ShapeError("conv2d_backward: grad shape " + shape_str(grad_out.shape()) +
                     " does not match output " + shape_str({ho, wo, k}));
  }

  ConvGrads<S> g;
  g.bias = TensorT<S>({k});
  const S* pg = grad_out.data();
  for (std::size_t r = 0; r < ho * wo; ++r) {
    for (std::size_t ch = 0; ch < k; ++ch) g.bias[ch] += pg[r * k + ch];
  }

  const std::size_t patch = p.in_channels() * p.filter_h() * p.filter_w();
  TensorT<S> col = im2col(x, p.filter_h(), p.filter_w(), p.stride);
  TensorT<S> gmat = grad_out.reshaped({ho * wo, k});
  g.weights = matmul_tn(gmat, col).reshaped(p.weights.shape());

  TensorT<S> wmat = p.weights.reshaped({k, patch});
  TensorT<S> gcol = matmul(gmat, wmat);
  g.input = col2im(gcol, x.shape(), p.filter_h(), p.filter_w(), p.stride);
  return g;
}

enum class PoolRounding { floor, ceil };

// Window and stride are fixed at 2; only the boundary rounding varies
// per layer. In ceil mode the trailing window is truncated, it never
// reads a padded value.
struct PoolSpec {
  static constexpr std::size_t window = 2;
  static constexpr std::size_t stride = 2;
  PoolRounding rounding = PoolRounding::floor;
};

inline std::size_t pool_out_extent(std::size_t in, PoolRounding r) {
  return r == PoolRounding::ceil ? (in + 1) / 2 : in / 2;
}

template <typename S>
struct MaxPoolResult {
  TensorT<S> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
  Shape input_shape;
};

template <typename S>
MaxPoolResult<S> maxpool_forward(const TensorT<S>& x, PoolSpec spec) {
  if (x.rank() != 3) throw ShapeError("maxpool: input must be [H,W,C], got " + shape_str(x.shape()));
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const std::size_t ho = pool_out_extent(h, spec.rounding);
  const std::size_t wo = pool_out_extent(w, spec.rounding);
  if (ho == 0 || wo == 0) {
    throw ShapeError("maxpool: input " + shape_str(x.shape()) + " pools to an empty output");
  }

  MaxPoolResult<S> res;
  res.output = TensorT<S>({ho, wo, c});
  res.argmax.resize(ho * wo * c);
  res.input_shape = x.shape();
  const S* in = x.data();
  for (std::size_t i = 0; i < ho; ++i) {
    const std::size_t rend = std::min(i * 2 + 2, h);
    for (std::size_t j = 0; j < wo; ++j) {
      const std::size_t cend = std::min(j * 2 + 2, w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (i * 2 * w + j * 2) * c + ch;
        S best_val = in[best];
        // ties keep the first window element in row-major order
        for (std::size_t u = i * 2; u < rend; ++u) {
          for (std::size_t v = j * 2; v < cend; ++v) {
            const std::size_t idx = (u * w + v) * c + ch;
            if (in[idx] > best_val) {
              best_val = in[idx];
              best = idx;
            }
          }
        }
        res.output(i, j, ch) = best_val;
        res.argmax[(i * wo + j) * c + ch] = best;
      }
    }
  }
  return res;
}

template <typename S>
TensorT<S> maxpool_backward(const std::vector<std::size_t>& argmax, const Shape& input_shape,
                            const TensorT<S>& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool_backward: argmax count " + std::to_string(argmax.size()) +
                     " does not match grad " + shape_str(grad_out.shape()));
  }
  TensorT<S> grad_in(input_shape);
  const std::size_t vol = shape_volume(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    if (argmax[o] >= vol) throw ShapeError("maxpool_backward: argmax index out of range");
    grad_in[argmax[o]] += grad_out[o];
  }
  return grad_in;
}

// y = tanh(scale * x); stays strictly inside (-1, 1).
template <typename S>
TensorT<S> scaled_tanh_forward(const TensorT<S>& x, S scale) {
  TensorT<S> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(scale * y[i]);
  return y;
}

// Backward in terms of the forward output: dy/dx = scale * (1 - y^2).
template <typename S>
TensorT<S> scaled_tanh_backward(const TensorT<S>& y, const TensorT<S>& grad_out, S scale) {
  require_same_shape(y, grad_out, "scaled_tanh_backward");
  TensorT<S> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= scale * (S(1) - y[i] * y[i]);
  return g;
}

template <typename S>
struct FcGrads {
  TensorT<S> input;
  TensorT<S> weights;
  TensorT<S> bias;
};

namespace detail {

template <typename S>
void check_fc_args(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  if (x.rank() != 1) throw ShapeError("fc: input must be rank-1, got " + shape_str(x.shape()));
  if (w.rank() != 2) throw ShapeError("fc: weights must be [m,n], got " + shape_str(w.shape()));
  if (w.shape()[1] != x.shape()[0]) {
    throw ShapeError("fc: weights " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (b.rank() != 1 || b.shape()[0] != w.shape()[0]) {
    throw ShapeError("fc: bias " + shape_str(b.shape()) + " incompatible with weights " +
                     shape_str(w.shape()));
  }
}

}  // namespace detail

template <typename S>
TensorT<S> fc_forward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  detail::check_fc_args(x, w, b);
  const std::size_t m = w.shape()[0], n = w.shape()[1];
  TensorT<S> y({m});
  const S* pw = w.data();
  const S* px = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    S acc = b[i];
    const S* row = pw + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * px[j];
    y[i] = acc;
  }
  return y;
}

template <typename S>
FcGrads<S> fc_backward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& grad_out) {
  const std::size_t m = w.shape()[0], n = w.shape()[1];
  if (grad_out.rank() != 1 || grad_out.shape()[0] != m) {
    throw ShapeError("fc_backward: grad " + shape_str(grad_out.shape()) + " incompatible with weights " +
                     shape_str(w.shape()));
  }
  FcGrads<S> g;
  g.bias = grad_out;
  g.weights = TensorT<S>({m, n});
  g.input = TensorT<S>({n});
  const S* pw = w.data();
  S* gw = g.weights.data();
  for (std::size_t i = 0; i < m; ++i) {
    const S go = grad_out[i];
    const S* row = pw + i * n;
    S* grow = gw + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      grow[j] = go * x[j];
      g.input[j] += go * row[j];
    }
  }
  return g;
}

enum class LayerMode { train, eval };

template <typename S>
struct DropoutResult {
  TensorT<S> output;
  TensorT<S> mask;  // 1 = kept, 0 = dropped
};

// Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
// the eval path is the identity.
template <typename S>
DropoutResult<S> dropout_forward(const TensorT<S>& x, double rate, LayerMode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ArgumentError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  DropoutResult<S> res;
  if (mode == LayerMode::eval || rate == 0.0) {
    res.output = x;
    res.mask = TensorT<S>::full(x.shape(), S(1));
    return res;
  }
  res.mask = TensorT<S>(x.shape());
  res.output = TensorT<S>(x.shape());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!rng.bernoulli(rate)) {
      res.mask[i] = S(1);
      res.output[i] = x[i] * keep_scale;
    }
  }
  return res;
}

template <typename S>
TensorT<S> dropout_backward(const TensorT<S>& mask, double rate, const TensorT<S>& grad_out) {
  require_same_shape(mask, grad_out, "dropout_backward");
  const S keep_scale = S(1.0 / (1.0 - rate));
  TensorT<S> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i] * keep_scale;
  return g;
}

template <typename S>
struct LossResult {
  S loss;
  TensorT<S> grad_logits;
};

// loss = -log softmax(logits)[label], computed via the log-sum-exp
// identity with max subtraction so extreme logits cannot overflow.
template <typename S>
LossResult<S> softmax_cross_entropy(const TensorT<S>& logits, std::size_t label) {
  if (logits.rank() != 1) {
    throw ShapeError("softmax_cross_entropy: logits must be rank-1, got " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.shape()[0];
  if (label >= n) throw ArgumentError("softmax_cross_entropy: label out of range");
  ensure_finite(logits, "softmax_cross_entropy");

  S max_logit = logits[0];
  for (std::size_t i = 1; i < n; ++i) max_logit = std::max(max_logit, logits[i]);
  S sum = S(0);
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - max_logit);
  const S log_sum = std::log(sum);

  LossResult<S> res;
  res.loss = -(logits[label] - max_logit - log_sum);
  res.grad_logits = TensorT<S>({n});
  for (std::size_t i = 0; i < n; ++i) {
    res.grad_logits[i] = std::exp(logits[i] - max_logit) / sum;
  }
  res.grad_logits[label] -= S(1);
  return res;
}

}  // namespace pnet

#endif
