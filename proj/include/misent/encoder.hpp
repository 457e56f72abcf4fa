#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "misent/corpus.hpp"
#include "misent/error.hpp"
#include "misent/rng.hpp"
#include "misent/tensor.hpp"

namespace misent {

// Multi-window 1-D convolution bank. Windows must be odd so symmetric zero
// padding preserves the sequence length; the per-token output is the
// concatenation of all window feature maps (width local_dim).
struct EncoderConfig {
  std::vector<int> window_sizes{1, 3, 5};
  int filters_per_window = 256;
  int d_in = 0;

  std::size_t local_dim() const {
    return window_sizes.size() * static_cast<std::size_t>(filters_per_window);
  }

  void validate() const {
    if (window_sizes.empty()) throw InvalidConfig("no window sizes");
    for (int k : window_sizes) {
      if (k <= 0 || k % 2 == 0)
        throw InvalidConfig("window sizes must be odd and positive, got " +
                            std::to_string(k));
    }
    if (filters_per_window <= 0)
      throw InvalidConfig("filters_per_window must be positive");
    if (d_in <= 0) throw InvalidConfig("d_in must be positive");
  }
};

// weight row f holds the flattened window [offset o, channel c] at o*d_in+c.
template <typename Real>
struct ConvWindowParams {
  int window = 1;
  Matrix<Real> weight;      // d_f x (k*d_in)
  std::vector<Real> bias;   // d_f
};

template <typename Real>
struct EncoderParams {
  std::vector<ConvWindowParams<Real>> windows;
};

// Fan-based uniform init, bound sqrt(6 / (k*d_in + d_f)).
template <typename Real>
EncoderParams<Real> init_encoder_params(const EncoderConfig& config,
                                        std::uint64_t seed) {
  config.validate();
  EncoderParams<Real> params;
  for (int k : config.window_sizes) {
    ConvWindowParams<Real> wp;
    wp.window = k;
    const std::size_t fan_in = static_cast<std::size_t>(k) * config.d_in;
    const std::size_t d_f = static_cast<std::size_t>(config.filters_per_window);
    wp.weight = Matrix<Real>(d_f, fan_in);
    wp.bias.assign(d_f, Real{0});
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + d_f));
    Rng rng(mix_seed(seed, hash_name("conv.k" + std::to_string(k))));
    for (std::size_t i = 0; i < wp.weight.size(); ++i)
      wp.weight.data()[i] = static_cast<Real>(rng.uniform(-bound, bound));
    params.windows.push_back(std::move(wp));
  }
  return params;
}

// Saved forward state: the input tensor and the pre-activations. Backward
// validates shapes against this to catch stale caches.
template <typename Real>
struct EncoderCache {
  Tensor3<Real> input;  // B x L x d_in
  Tensor3<Real> pre;    // B x L x d, pre-ReLU, only unmasked rows meaningful
};

template <typename Real>
struct EncodedBatch {
  Tensor3<Real> local;            // B x L x d, zero at masked positions
  Matrix<Real> global;            // B x d, masked mean over time
  Matrix<std::uint8_t> mask;      // B x L
  std::vector<std::size_t> lengths;
  EncoderCache<Real> cache;
};

template <typename Real>
struct EncoderGrads {
  EncoderParams<Real> params;  // same shapes, gradient values
  Tensor3<Real> input;         // dLoss/dH, zero at masked positions
};

namespace detail {

template <typename Real>
void check_conv_shapes(const Tensor3<Real>& input,
                       const Matrix<std::uint8_t>& mask,
                       const EncoderParams<Real>& params,
                       const EncoderConfig& config) {
  if (input.dim0() != mask.rows() || input.dim1() != mask.cols())
    throw ShapeMismatch("input tensor does not match mask");
  if (input.dim2() != static_cast<std::size_t>(config.d_in))
    throw ShapeMismatch("input width " + std::to_string(input.dim2()) +
                        " != configured d_in " + std::to_string(config.d_in));
  if (params.windows.size() != config.window_sizes.size())
    throw ShapeMismatch("parameter/window count mismatch");
  for (std::size_t w = 0; w < params.windows.size(); ++w) {
    const auto& wp = params.windows[w];
    const std::size_t d_f = static_cast<std::size_t>(config.filters_per_window);
    if (wp.window != config.window_sizes[w] || wp.weight.rows() != d_f ||
        wp.weight.cols() != static_cast<std::size_t>(wp.window) * input.dim2() ||
        wp.bias.size() != d_f)
      throw ShapeMismatch("convolution parameter shapes inconsistent");
  }
}

}  // namespace detail

// c_i = ReLU(W_k . input[i-(k-1)/2 .. i+(k-1)/2] + b_k), zero rows substituted
// outside the sequence. Masked positions are forced to zero after the
// convolution so padding never reaches pooling or the MI scores.
// Precondition: input rows at masked positions are zero.
template <typename Real>
void conv_forward(const Tensor3<Real>& input, const Matrix<std::uint8_t>& mask,
                  const EncoderParams<Real>& params, const EncoderConfig& config,
                  Tensor3<Real>& local, EncoderCache<Real>& cache) {
  detail::check_conv_shapes(input, mask, params, config);
  const std::size_t B = input.dim0();
  const std::size_t L = input.dim1();
  const std::size_t e = input.dim2();
  const std::size_t d_f = static_cast<std::size_t>(config.filters_per_window);
  const std::size_t d = config.local_dim();

  local = Tensor3<Real>(B, L, d, Real{0});
  cache.pre = Tensor3<Real>(B, L, d, Real{0});
  cache.input = input;

  for (std::size_t w = 0; w < params.windows.size(); ++w) {
    const auto& wp = params.windows[w];
    const int k = wp.window;
    const int off = (k - 1) / 2;
    const std::size_t base = w * d_f;
    for (std::size_t s = 0; s < B; ++s) {
      for (std::size_t i = 0; i < L; ++i) {
        if (!mask(s, i)) continue;
        Real* pre_row = cache.pre.row(s, i) + base;
        Real* out_row = local.row(s, i) + base;
        for (std::size_t f = 0; f < d_f; ++f) {
          const Real* wrow = wp.weight.row(f);
          Real acc = wp.bias[f];
          for (int o = 0; o < k; ++o) {
            const long p = static_cast<long>(i) + o - off;
            if (p < 0 || p >= static_cast<long>(L)) continue;
            acc += dot(wrow + static_cast<std::size_t>(o) * e,
                       input.row(s, static_cast<std::size_t>(p)), e);
          }
          pre_row[f] = acc;
          out_row[f] = acc > Real{0} ? acc : Real{0};
        }
      }
    }
  }
}

// Masked arithmetic mean over token positions.
template <typename Real>
Matrix<Real> pool_forward(const Tensor3<Real>& local,
                          const Matrix<std::uint8_t>& mask) {
  if (local.dim0() != mask.rows() || local.dim1() != mask.cols())
    throw ShapeMismatch("local tensor does not match mask");
  const std::size_t B = local.dim0();
  const std::size_t L = local.dim1();
  const std::size_t d = local.dim2();
  Matrix<Real> global(B, d, Real{0});
  for (std::size_t s = 0; s < B; ++s) {
    std::size_t len = 0;
    for (std::size_t i = 0; i < L; ++i) {
      if (!mask(s, i)) continue;
      ++len;
      axpy(Real{1}, local.row(s, i), global.row(s), d);
    }
    if (len == 0)
      throw EmptyMask("sentence " + std::to_string(s) + " has no tokens");
    const Real inv = Real{1} / static_cast<Real>(len);
    Real* g = global.row(s);
    for (std::size_t j = 0; j < d; ++j) g[j] *= inv;
  }
  return global;
}

template <typename Real>
EncodedBatch<Real> encode_batch(const Tensor3<Real>& input,
                                const Matrix<std::uint8_t>& mask,
                                const EncoderParams<Real>& params,
                                const EncoderConfig& config) {
  EncodedBatch<Real> out;
  out.mask = mask;
  conv_forward(input, mask, params, config, out.local, out.cache);
  out.global = pool_forward(out.local, mask);
  out.lengths.resize(mask.rows());
  for (std::size_t s = 0; s < mask.rows(); ++s) {
    std::size_t len = 0;
    for (std::size_t i = 0; i < mask.cols(); ++i) len += mask(s, i);
    out.lengths[s] = len;
  }
  return out;
}

// Exact gradients of (conv + ReLU + masked mean) given upstream gradients on
// the local tensor and the pooled global matrix. ReLU subgradient at 0 is 0.
// grad at masked input rows is zeroed: padding is structural, not a variable.
template <typename Real>
EncoderGrads<Real> encoder_backward(const Tensor3<Real>& grad_local,
                                    const Matrix<Real>& grad_global,
                                    const Matrix<std::uint8_t>& mask,
                                    const EncoderParams<Real>& params,
                                    const EncoderConfig& config,
                                    const EncoderCache<Real>& cache) {
  const std::size_t B = cache.input.dim0();
  const std::size_t L = cache.input.dim1();
  const std::size_t e = cache.input.dim2();
  const std::size_t d = config.local_dim();
  if (cache.pre.dim0() != B || cache.pre.dim1() != L || cache.pre.dim2() != d)
    throw StaleCache("cache pre-activation shape mismatch");
  if (grad_local.dim0() != B || grad_local.dim1() != L || grad_local.dim2() != d)
    throw StaleCache("grad_local shape mismatch");
  if (grad_global.rows() != B || grad_global.cols() != d)
    throw StaleCache("grad_global shape mismatch");
  if (mask.rows() != B || mask.cols() != L)
    throw StaleCache("mask shape mismatch");
  detail::check_conv_shapes(cache.input, mask, params, config);

  const std::size_t d_f = static_cast<std::size_t>(config.filters_per_window);

  std::vector<std::size_t> lengths(B, 0);
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t i = 0; i < L; ++i) lengths[s] += mask(s, i);

  // delta = ReLU'(pre) * (grad_local + grad_global / len) at unmasked rows
  Tensor3<Real> delta(B, L, d, Real{0});
  for (std::size_t s = 0; s < B; ++s) {
    if (lengths[s] == 0)
      throw EmptyMask("sentence " + std::to_string(s) + " has no tokens");
    const Real inv_len = Real{1} / static_cast<Real>(lengths[s]);
    for (std::size_t i = 0; i < L; ++i) {
      if (!mask(s, i)) continue;
      const Real* gl = grad_local.row(s, i);
      const Real* gg = grad_global.row(s);
      const Real* pre = cache.pre.row(s, i);
      Real* dst = delta.row(s, i);
      for (std::size_t j = 0; j < d; ++j)
        dst[j] = pre[j] > Real{0} ? gl[j] + gg[j] * inv_len : Real{0};
    }
  }

  EncoderGrads<Real> grads;
  grads.input = Tensor3<Real>(B, L, e, Real{0});
  for (const auto& wp : params.windows) {
    ConvWindowParams<Real> g;
    g.window = wp.window;
    g.weight = Matrix<Real>(wp.weight.rows(), wp.weight.cols(), Real{0});
    g.bias.assign(wp.bias.size(), Real{0});
    grads.params.windows.push_back(std::move(g));
  }

  for (std::size_t w = 0; w < params.windows.size(); ++w) {
    const auto& wp = params.windows[w];
    auto& gp = grads.params.windows[w];
    const int k = wp.window;
    const int off = (k - 1) / 2;
    const std::size_t base = w * d_f;
    for (std::size_t s = 0; s < B; ++s) {
      for (std::size_t i = 0; i < L; ++i) {
        if (!mask(s, i)) continue;
        const Real* drow = delta.row(s, i) + base;
        for (std::size_t f = 0; f < d_f; ++f) {
          const Real dv = drow[f];
          if (dv == Real{0}) continue;
          gp.bias[f] += dv;
          Real* gw = gp.weight.row(f);
          const Real* wrow = wp.weight.row(f);
          for (int o = 0; o < k; ++o) {
            const long p = static_cast<long>(i) + o - off;
            if (p < 0 || p >= static_cast<long>(L)) continue;
            const std::size_t col = static_cast<std::size_t>(o) * e;
            axpy(dv, cache.input.row(s, static_cast<std::size_t>(p)), gw + col, e);
            axpy(dv, wrow + col, grads.input.row(s, static_cast<std::size_t>(p)), e);
          }
        }
      }
    }
  }

  // padding rows carry no gradient
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t i = 0; i < L; ++i)
      if (!mask(s, i)) {
        Real* r = grads.input.row(s, i);
        for (std::size_t c = 0; c < e; ++c) r[c] = Real{0};
      }

  return grads;
}

}  // namespace misent
