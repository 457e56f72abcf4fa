#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "misent/encoder.hpp"
#include "misent/error.hpp"
#include "misent/rng.hpp"
#include "misent/tensor.hpp"

namespace misent {

// log(1 + e^z) without overflow.
template <typename Real>
inline Real softplus(Real z) {
  const Real zero{0};
  const Real m = z > zero ? z : zero;
  return m + std::log1p(std::exp(-std::abs(z)));
}

template <typename Real>
inline Real sigmoid(Real z) {
  if (z >= Real{0}) return Real{1} / (Real{1} + std::exp(-z));
  const Real ez = std::exp(z);
  return ez / (Real{1} + ez);
}

// One-hidden-layer MLP over the concatenated (local, global) pair:
// T = u . ReLU(W1 [local; global] + b1) + b0.
// W1 row h holds the local half in columns [0, d) and the global half in
// [d, 2d).
template <typename Real>
struct DiscriminatorParams {
  Matrix<Real> w1;        // d_h x 2d
  std::vector<Real> b1;   // d_h
  std::vector<Real> u;    // d_h
  Real b0 = Real{0};

  std::size_t hidden_dim() const { return w1.rows(); }
  std::size_t pair_dim() const { return w1.cols() / 2; }
};

template <typename Real>
DiscriminatorParams<Real> init_discriminator(std::size_t local_dim,
                                             std::size_t hidden_dim,
                                             std::uint64_t seed) {
  if (local_dim == 0 || hidden_dim == 0)
    throw InvalidConfig("discriminator dims must be positive");
  DiscriminatorParams<Real> p;
  p.w1 = Matrix<Real>(hidden_dim, 2 * local_dim);
  p.b1.assign(hidden_dim, Real{0});
  p.u.assign(hidden_dim, Real{0});
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * local_dim + hidden_dim));
  {
    Rng rng(mix_seed(seed, hash_name("disc.w1")));
    for (std::size_t i = 0; i < p.w1.size(); ++i)
      p.w1.data()[i] = static_cast<Real>(rng.uniform(-bound, bound));
  }
  {
    const double ubound = std::sqrt(3.0 / static_cast<double>(hidden_dim));
    Rng rng(mix_seed(seed, hash_name("disc.u")));
    for (std::size_t h = 0; h < hidden_dim; ++h)
      p.u[h] = static_cast<Real>(rng.uniform(-ubound, ubound));
  }
  return p;
}

template <typename Real>
struct ScoreCache {
  std::vector<Real> hidden_pre;  // d_h
};

// Scores a single (local, global) pair. The batch objective uses the batched
// path below; this entry point exists for direct inspection and tests.
template <typename Real>
Real discriminator_score(const Real* local_rep, const Real* global_rep,
                         const DiscriminatorParams<Real>& params,
                         ScoreCache<Real>* cache = nullptr) {
  const std::size_t d = params.pair_dim();
  const std::size_t d_h = params.hidden_dim();
  if (d == 0) throw ShapeMismatch("discriminator has zero pair width");
  Real score = params.b0;
  if (cache) cache->hidden_pre.assign(d_h, Real{0});
  for (std::size_t h = 0; h < d_h; ++h) {
    const Real* row = params.w1.row(h);
    const Real pre = params.b1[h] + dot(row, local_rep, d) + dot(row + d, global_rep, d);
    if (cache) cache->hidden_pre[h] = pre;
    if (pre > Real{0}) score += params.u[h] * pre;
  }
  return score;
}

// Everything jsd_backward needs, plus the per-sentence terms for inspection.
// scores(x, t) = T(local token t, global of sentence x) over all unmasked
// tokens t in the batch, own-sentence tokens included (those are the
// positive pairs; the rest are the in-batch negatives).
template <typename Real>
struct MiBatchResult {
  Real objective = Real{0};
  std::vector<Real> per_sentence;
  std::vector<Real> positive_terms;
  std::vector<Real> negative_terms;
  bool length_norm = true;

  // caches for backward
  Matrix<Real> scores;                                  // B x T
  std::vector<std::pair<std::size_t, std::size_t>> token_pos;  // t -> (s, i)
  Matrix<Real> proj_local;   // T x d_h, W1_local . local_t
  Matrix<Real> proj_global;  // B x d_h, W1_global . global_x
  std::vector<std::size_t> lengths;
};

// Jensen-Shannon MI lower bound over a batch with in-batch negatives.
// Per sentence x: positive = mean_i -sp(-T(F_i(x), g_x)) over its tokens,
// negative = mean over all other-sentence tokens of sp(T(F_j(x'), g_x)),
// per_sentence = positive - negative. Without length_norm the positive side
// is the plain sum over tokens and the negative side is scaled by l_x.
template <typename Real>
MiBatchResult<Real> jsd_batch(const EncodedBatch<Real>& encoded,
                              const DiscriminatorParams<Real>& params,
                              bool length_norm = true) {
  const std::size_t B = encoded.local.dim0();
  const std::size_t L = encoded.local.dim1();
  const std::size_t d = encoded.local.dim2();
  if (B < 2)
    throw BatchTooSmall("MI objective needs at least 2 sentences, got " +
                        std::to_string(B));
  if (params.pair_dim() != d)
    throw ShapeMismatch("discriminator width " + std::to_string(params.pair_dim()) +
                        " != local width " + std::to_string(d));
  if (encoded.global.rows() != B || encoded.global.cols() != d ||
      encoded.mask.rows() != B || encoded.mask.cols() != L)
    throw ShapeMismatch("encoded batch tensors inconsistent");

  const std::size_t d_h = params.hidden_dim();

  MiBatchResult<Real> res;
  res.length_norm = length_norm;
  res.lengths = encoded.lengths;
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t i = 0; i < L; ++i)
      if (encoded.mask(s, i)) res.token_pos.emplace_back(s, i);
  const std::size_t T = res.token_pos.size();

  res.proj_local = Matrix<Real>(T, d_h);
  for (std::size_t t = 0; t < T; ++t) {
    const auto [s, i] = res.token_pos[t];
    const Real* a = encoded.local.row(s, i);
    for (std::size_t h = 0; h < d_h; ++h)
      res.proj_local(t, h) = dot(params.w1.row(h), a, d);
  }
  res.proj_global = Matrix<Real>(B, d_h);
  for (std::size_t x = 0; x < B; ++x) {
    const Real* g = encoded.global.row(x);
    for (std::size_t h = 0; h < d_h; ++h)
      res.proj_global(x, h) = dot(params.w1.row(h) + d, g, d);
  }

  res.scores = Matrix<Real>(B, T);
  for (std::size_t x = 0; x < B; ++x) {
    const Real* pg = res.proj_global.row(x);
    for (std::size_t t = 0; t < T; ++t) {
      const Real* pl = res.proj_local.row(t);
      Real score = params.b0;
      for (std::size_t h = 0; h < d_h; ++h) {
        const Real pre = params.b1[h] + pl[h] + pg[h];
        if (pre > Real{0}) score += params.u[h] * pre;
      }
      res.scores(x, t) = score;
    }
  }

  res.per_sentence.assign(B, Real{0});
  res.positive_terms.assign(B, Real{0});
  res.negative_terms.assign(B, Real{0});
  Real total = Real{0};
  for (std::size_t x = 0; x < B; ++x) {
    const Real l_x = static_cast<Real>(res.lengths[x]);
    const std::size_t n_x = T - res.lengths[x];
    if (n_x == 0)
      throw BatchTooSmall("no negative tokens for sentence " + std::to_string(x));
    Real pos = Real{0};
    Real neg = Real{0};
    for (std::size_t t = 0; t < T; ++t) {
      const Real score = res.scores(x, t);
      if (res.token_pos[t].first == x)
        pos -= softplus(-score);
      else
        neg += softplus(score);
    }
    neg /= static_cast<Real>(n_x);
    if (length_norm)
      pos /= l_x;
    else
      neg *= l_x;
    res.positive_terms[x] = pos;
    res.negative_terms[x] = neg;
    res.per_sentence[x] = pos - neg;
    total += res.per_sentence[x];
  }
  res.objective = total / static_cast<Real>(B);
  return res;
}

template <typename Real>
struct DiscriminatorGrads {
  Matrix<Real> w1;
  std::vector<Real> b1;
  std::vector<Real> u;
  Real b0 = Real{0};
};

template <typename Real>
struct MiGrads {
  DiscriminatorGrads<Real> disc;
  Tensor3<Real> local;   // dLoss/dlocal
  Matrix<Real> global;   // dLoss/dglobal
};

// Gradients of loss = -objective, so a descent optimizer maximizes the MI
// bound. Chains into the encoder via `local` and `global`.
template <typename Real>
MiGrads<Real> jsd_backward(const MiBatchResult<Real>& result,
                           const EncodedBatch<Real>& encoded,
                           const DiscriminatorParams<Real>& params) {
  const std::size_t B = encoded.local.dim0();
  const std::size_t L = encoded.local.dim1();
  const std::size_t d = encoded.local.dim2();
  const std::size_t d_h = params.hidden_dim();
  const std::size_t T = result.token_pos.size();
  std::size_t batch_tokens = 0;
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t i = 0; i < L; ++i) batch_tokens += encoded.mask(s, i);
  if (result.scores.rows() != B || result.scores.cols() != T ||
      result.proj_local.rows() != T || result.proj_local.cols() != d_h ||
      result.proj_global.rows() != B || result.lengths != encoded.lengths ||
      batch_tokens != T || params.pair_dim() != d)
    throw StaleCache("MI result does not match encoded batch / params");

  MiGrads<Real> grads;
  grads.disc.w1 = Matrix<Real>(d_h, 2 * d, Real{0});
  grads.disc.b1.assign(d_h, Real{0});
  grads.disc.u.assign(d_h, Real{0});
  grads.disc.b0 = Real{0};
  grads.local = Tensor3<Real>(B, L, d, Real{0});
  grads.global = Matrix<Real>(B, d, Real{0});

  // q(t) = sum_x dpre(x, t); r(x) = sum_t dpre(x, t), where dpre is the
  // gradient reaching the hidden pre-activation of pair (x, t).
  Matrix<Real> q(T, d_h, Real{0});
  Matrix<Real> r(B, d_h, Real{0});

  const Real inv_b = Real{1} / static_cast<Real>(B);
  for (std::size_t x = 0; x < B; ++x) {
    const Real l_x = static_cast<Real>(result.lengths[x]);
    const Real n_x = static_cast<Real>(T - result.lengths[x]);
    const Real pos_coef = result.length_norm ? inv_b / l_x : inv_b;
    const Real neg_coef = result.length_norm ? inv_b / n_x : inv_b * l_x / n_x;
    const Real* pg = result.proj_global.row(x);
    Real* r_row = r.row(x);
    for (std::size_t t = 0; t < T; ++t) {
      const Real score = result.scores(x, t);
      // dLoss/dT with Loss = -objective
      const Real w = result.token_pos[t].first == x
                         ? -pos_coef * sigmoid(-score)
                         : neg_coef * sigmoid(score);
      grads.disc.b0 += w;
      const Real* pl = result.proj_local.row(t);
      Real* q_row = q.row(t);
      for (std::size_t h = 0; h < d_h; ++h) {
        const Real pre = params.b1[h] + pl[h] + pg[h];
        if (pre <= Real{0}) continue;
        grads.disc.u[h] += w * pre;
        const Real dpre = w * params.u[h];
        q_row[h] += dpre;
        r_row[h] += dpre;
      }
    }
  }

  // dW1 left half: sum_t q(t) (x) local_t; right half: sum_x r(x) (x) g_x.
  for (std::size_t t = 0; t < T; ++t) {
    const auto [s, i] = result.token_pos[t];
    const Real* a = encoded.local.row(s, i);
    const Real* q_row = q.row(t);
    Real* gl = grads.local.row(s, i);
    for (std::size_t h = 0; h < d_h; ++h) {
      const Real coef = q_row[h];
      if (coef == Real{0}) continue;
      axpy(coef, a, grads.disc.w1.row(h), d);
      axpy(coef, params.w1.row(h), gl, d);
      grads.disc.b1[h] += coef;
    }
  }
  for (std::size_t x = 0; x < B; ++x) {
    const Real* g = encoded.global.row(x);
    const Real* r_row = r.row(x);
    Real* gg = grads.global.row(x);
    for (std::size_t h = 0; h < d_h; ++h) {
      const Real coef = r_row[h];
      if (coef == Real{0}) continue;
      axpy(coef, g, grads.disc.w1.row(h) + d, d);
      axpy(coef, params.w1.row(h) + d, gg, d);
    }
  }
  return grads;
}

}  // namespace misent
