#include "misent/encoder.hpp"

#include <cmath>

#include "doctest.h"
#include "misent/error.hpp"
#include "misent/rng.hpp"
#include "support.hpp"

using namespace misent;
using test_support::central_diff;
using test_support::rel_err;

namespace {

Matrix<std::uint8_t> full_mask(std::size_t b, std::size_t l) {
  return Matrix<std::uint8_t>(b, l, 1);
}

template <typename Real>
Tensor3<Real> random_input(std::size_t b, std::size_t l, std::size_t e,
                           const Matrix<std::uint8_t>& mask, Rng& rng) {
  Tensor3<Real> h(b, l, e, Real{0});
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < l; ++i)
      if (mask(s, i))
        for (std::size_t c = 0; c < e; ++c)
          h(s, i, c) = static_cast<Real>(rng.uniform(-1, 1));
  return h;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("config validation") {
  EncoderConfig cfg;
  cfg.d_in = 4;
  CHECK_NOTHROW(cfg.validate());
  cfg.window_sizes = {2};
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg.window_sizes = {1, 3};
  cfg.filters_per_window = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("window-1 identity weights reduce to ReLU") {
  EncoderConfig cfg;
  cfg.window_sizes = {1};
  cfg.filters_per_window = 2;
  cfg.d_in = 2;
  EncoderParams<double> params;
  ConvWindowParams<double> wp;
  wp.window = 1;
  wp.weight = Matrix<double>(2, 2, 0.0);
  wp.weight(0, 0) = 1.0;
  wp.weight(1, 1) = 1.0;
  wp.bias = {0.0, 0.0};
  params.windows.push_back(std::move(wp));

  Tensor3<double> h(1, 1, 2);
  h(0, 0, 0) = -1.0;
  h(0, 0, 1) = 2.0;
  Tensor3<double> local;
  EncoderCache<double> cache;
  conv_forward(h, full_mask(1, 1), params, cfg, local, cache);
  CHECK(local(0, 0, 0) == 0.0);  // ReLU clips the negative channel
  CHECK(local(0, 0, 1) == 2.0);
}

TEST_CASE("zero weights with bias map every unmasked position to the bias") {
  EncoderConfig cfg;
  cfg.window_sizes = {3};
  cfg.filters_per_window = 4;
  cfg.d_in = 3;
  EncoderParams<double> params;
  ConvWindowParams<double> wp;
  wp.window = 3;
  wp.weight = Matrix<double>(4, 9, 0.0);
  wp.bias.assign(4, 1.0);
  params.windows.push_back(std::move(wp));

  Matrix<std::uint8_t> mask(2, 3, 0);
  mask(0, 0) = mask(0, 1) = mask(0, 2) = 1;
  mask(1, 0) = 1;
  Rng rng(3);
  const auto h = random_input<double>(2, 3, 3, mask, rng);
  Tensor3<double> local;
  EncoderCache<double> cache;
  conv_forward(h, mask, params, cfg, local, cache);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t f = 0; f < 4; ++f) CHECK(local(0, i, f) == 1.0);
  for (std::size_t f = 0; f < 4; ++f) {
    CHECK(local(1, 0, f) == 1.0);
    CHECK(local(1, 1, f) == 0.0);  // masked stays zero despite the bias
    CHECK(local(1, 2, f) == 0.0);
  }
}

TEST_CASE("k=3 on a single token equals ReLU(W [0; h1; 0])") {
  EncoderConfig cfg;
  cfg.window_sizes = {3};
  cfg.filters_per_window = 5;
  cfg.d_in = 4;
  auto params = init_encoder_params<double>(cfg, 17);

  Rng rng(18);
  const auto mask = full_mask(1, 1);
  const auto h = random_input<double>(1, 1, 4, mask, rng);
  Tensor3<double> local;
  EncoderCache<double> cache;
  conv_forward(h, mask, params, cfg, local, cache);

  for (std::size_t f = 0; f < 5; ++f) {
    // only the centre slot of the window sees data
    double acc = params.windows[0].bias[f];
    for (std::size_t c = 0; c < 4; ++c)
      acc += params.windows[0].weight(f, 4 + c) * h(0, 0, c);
    CHECK(local(0, 0, f) == doctest::Approx(std::max(0.0, acc)).epsilon(1e-12));
  }
}

TEST_CASE("pooling basics") {
  Tensor3<double> local(1, 3, 2);
  const double v[2] = {0.5, -1.5};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) local(0, i, c) = v[c];
  auto global = pool_forward(local, full_mask(1, 3));
  CHECK(global(0, 0) == doctest::Approx(0.5));
  CHECK(global(0, 1) == doctest::Approx(-1.5));

  Tensor3<double> anti(1, 2, 2);
  anti(0, 0, 0) = 1.0;
  anti(0, 0, 1) = -2.0;
  anti(0, 1, 0) = -1.0;
  anti(0, 1, 1) = 2.0;
  global = pool_forward(anti, full_mask(1, 2));
  CHECK(global(0, 0) == doctest::Approx(0.0));
  CHECK(global(0, 1) == doctest::Approx(0.0));

  // junk beyond the mask contributes nothing
  Tensor3<double> with_junk(1, 3, 1);
  with_junk(0, 0, 0) = 2.0;
  with_junk(0, 1, 0) = 4.0;
  with_junk(0, 2, 0) = 1e9;
  Matrix<std::uint8_t> mask(1, 3, 1);
  mask(0, 2) = 0;
  global = pool_forward(with_junk, mask);
  CHECK(global(0, 0) == doctest::Approx(3.0));

  Matrix<std::uint8_t> empty(1, 2, 0);
  CHECK_THROWS_AS(pool_forward(anti, empty), EmptyMask);
}

TEST_CASE("zero upstream gradients give zero parameter gradients") {
  EncoderConfig cfg;
  cfg.window_sizes = {1, 3};
  cfg.filters_per_window = 3;
  cfg.d_in = 2;
  auto params = init_encoder_params<double>(cfg, 5);
  Rng rng(6);
  const auto mask = full_mask(2, 3);
  const auto h = random_input<double>(2, 3, 2, mask, rng);
  const auto encoded = encode_batch(h, mask, params, cfg);

  Tensor3<double> zero_local(2, 3, cfg.local_dim(), 0.0);
  Matrix<double> zero_global(2, cfg.local_dim(), 0.0);
  const auto grads =
      encoder_backward(zero_local, zero_global, mask, params, cfg, encoded.cache);
  for (const auto& wp : grads.params.windows) {
    for (std::size_t i = 0; i < wp.weight.size(); ++i)
      CHECK(wp.weight.data()[i] == 0.0);
    for (double b : wp.bias) CHECK(b == 0.0);
  }
  for (std::size_t i = 0; i < grads.input.size(); ++i)
    CHECK(grads.input.data()[i] == 0.0);
}

TEST_CASE("k=1 single token: dW is grad x input on active units") {
  // 2x2 hand case: one sentence, one token, window 1
  EncoderConfig cfg;
  cfg.window_sizes = {1};
  cfg.filters_per_window = 2;
  cfg.d_in = 2;
  EncoderParams<double> params;
  ConvWindowParams<double> wp;
  wp.window = 1;
  wp.weight = Matrix<double>(2, 2);
  wp.weight(0, 0) = 0.3;
  wp.weight(0, 1) = -0.2;
  wp.weight(1, 0) = -0.5;
  wp.weight(1, 1) = -0.4;
  wp.bias = {0.0, 0.0};
  params.windows.push_back(std::move(wp));

  Tensor3<double> h(1, 1, 2);
  h(0, 0, 0) = 1.0;
  h(0, 0, 1) = 2.0;
  // pre_0 = 0.3 - 0.4 = -0.1 < 0 (inactive), pre_1 = -0.5 - 0.8 < 0 (inactive)
  // flip row 0 active by raising bias
  params.windows[0].bias[0] = 0.5;  // pre_0 = 0.4 > 0

  const auto mask = full_mask(1, 1);
  const auto encoded = encode_batch(h, mask, params, cfg);
  Tensor3<double> grad_local(1, 1, 2, 0.0);
  grad_local(0, 0, 0) = 0.7;
  grad_local(0, 0, 1) = 0.9;
  Matrix<double> grad_global(1, 2, 0.0);
  const auto grads =
      encoder_backward(grad_local, grad_global, mask, params, cfg, encoded.cache);

  // active unit 0: dW row = grad * h; inactive unit 1: zero
  CHECK(grads.params.windows[0].weight(0, 0) == doctest::Approx(0.7 * 1.0));
  CHECK(grads.params.windows[0].weight(0, 1) == doctest::Approx(0.7 * 2.0));
  CHECK(grads.params.windows[0].weight(1, 0) == 0.0);
  CHECK(grads.params.windows[0].weight(1, 1) == 0.0);
  CHECK(grads.params.windows[0].bias[0] == doctest::Approx(0.7));
  CHECK(grads.params.windows[0].bias[1] == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  EncoderConfig cfg;
  cfg.window_sizes = {1, 3, 5};
  cfg.filters_per_window = 3;
  cfg.d_in = 4;
  auto params = init_encoder_params<double>(cfg, 21);

  Rng rng(22);
  Matrix<std::uint8_t> mask(3, 5, 0);
  const std::size_t lens[3] = {5, 2, 3};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < lens[s]; ++i) mask(s, i) = 1;
  auto h = random_input<double>(3, 5, 4, mask, rng);

  // random linear functional of (local, global) as the scalar loss
  const std::size_t d = cfg.local_dim();
  Tensor3<double> w_local(3, 5, d);
  Matrix<double> w_global(3, d);
  for (std::size_t i = 0; i < w_local.size(); ++i)
    w_local.data()[i] = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < w_global.size(); ++i)
    w_global.data()[i] = rng.uniform(-1, 1);

  auto loss = [&] {
    const auto encoded = encode_batch(h, mask, params, cfg);
    double acc = 0;
    for (std::size_t i = 0; i < w_local.size(); ++i)
      acc += w_local.data()[i] * encoded.local.data()[i];
    for (std::size_t i = 0; i < w_global.size(); ++i)
      acc += w_global.data()[i] * encoded.global.data()[i];
    return acc;
  };

  const auto encoded = encode_batch(h, mask, params, cfg);
  auto grads =
      encoder_backward(w_local, w_global, mask, params, cfg, encoded.cache);

  Rng pick(23);
  std::size_t checked = 0;
  for (std::size_t w = 0; w < params.windows.size(); ++w) {
    auto& wp = params.windows[w];
    for (int c = 0; c < 30; ++c) {
      const std::size_t j = pick.below(wp.weight.size());
      const double numeric = central_diff(loss, wp.weight.data() + j);
      CHECK(rel_err(grads.params.windows[w].weight.data()[j], numeric) < 1e-4);
      ++checked;
    }
    for (int c = 0; c < 5; ++c) {
      const std::size_t j = pick.below(wp.bias.size());
      const double numeric = central_diff(loss, wp.bias.data() + j);
      CHECK(rel_err(grads.params.windows[w].bias[j], numeric) < 1e-4);
      ++checked;
    }
  }
  // gradient w.r.t. the input embeddings (unmasked coordinates only)
  for (int c = 0; c < 25; ++c) {
    const std::size_t s = pick.below(3);
    const std::size_t i = pick.below(lens[s]);
    const std::size_t ch = pick.below(4);
    const double numeric = central_diff(loss, &h(s, i, ch));
    CHECK(rel_err(grads.input(s, i, ch), numeric) < 1e-4);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("appending padded positions leaves the encoding bitwise unchanged") {
  EncoderConfig cfg;
  cfg.window_sizes = {1, 3};
  cfg.filters_per_window = 4;
  cfg.d_in = 3;
  auto params = init_encoder_params<float>(cfg, 31);
  Rng rng(32);

  Matrix<std::uint8_t> tight_mask = full_mask(1, 4);
  const auto tight = random_input<float>(1, 4, 3, tight_mask, rng);

  Matrix<std::uint8_t> padded_mask(1, 7, 0);
  for (std::size_t i = 0; i < 4; ++i) padded_mask(0, i) = 1;
  Tensor3<float> padded(1, 7, 3, 0.0f);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) padded(0, i, c) = tight(0, i, c);

  const auto enc_a = encode_batch(tight, tight_mask, params, cfg);
  const auto enc_b = encode_batch(padded, padded_mask, params, cfg);
  CHECK(enc_a.local.dim1() == 4);  // length preserved per window
  for (std::size_t j = 0; j < cfg.local_dim(); ++j) {
    CHECK(enc_a.global(0, j) == enc_b.global(0, j));  // bitwise
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(enc_a.local(0, i, j) == enc_b.local(0, i, j));
  }
  for (std::size_t i = 4; i < 7; ++i)
    for (std::size_t j = 0; j < cfg.local_dim(); ++j)
      CHECK(enc_b.local(0, i, j) == 0.0f);
}

TEST_CASE("pooling identity when all unmasked reps are equal") {
  // config where every position sees identical windows: k=1, constant input
  EncoderConfig cfg;
  cfg.window_sizes = {1};
  cfg.filters_per_window = 3;
  cfg.d_in = 2;
  auto params = init_encoder_params<double>(cfg, 41);
  Tensor3<double> h(1, 4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    h(0, i, 0) = 0.3;
    h(0, i, 1) = -0.7;
  }
  const auto mask = full_mask(1, 4);
  const auto encoded = encode_batch(h, mask, params, cfg);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(encoded.global(0, j) == doctest::Approx(encoded.local(0, 0, j)));
}

TEST_CASE("window-1 encoder equals a directly coded affine+ReLU+mean oracle") {
  EncoderConfig cfg;
  cfg.window_sizes = {1};
  cfg.filters_per_window = 4;
  cfg.d_in = 3;
  auto params = init_encoder_params<double>(cfg, 51);
  Rng rng(52);
  Matrix<std::uint8_t> mask(2, 3, 0);
  mask(0, 0) = mask(0, 1) = mask(0, 2) = 1;
  mask(1, 0) = mask(1, 1) = 1;
  const auto h = random_input<double>(2, 3, 3, mask, rng);
  const auto encoded = encode_batch(h, mask, params, cfg);

  for (std::size_t s = 0; s < 2; ++s) {
    const std::size_t len = s == 0 ? 3 : 2;
    for (std::size_t f = 0; f < 4; ++f) {
      double mean = 0;
      for (std::size_t i = 0; i < len; ++i) {
        double pre = params.windows[0].bias[f];
        for (std::size_t c = 0; c < 3; ++c)
          pre += params.windows[0].weight(f, c) * h(s, i, c);
        mean += std::max(0.0, pre);
      }
      mean /= static_cast<double>(len);
      CHECK(encoded.global(s, f) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward rejects stale caches") {
  EncoderConfig cfg;
  cfg.window_sizes = {1};
  cfg.filters_per_window = 2;
  cfg.d_in = 2;
  auto params = init_encoder_params<double>(cfg, 61);
  Rng rng(62);
  const auto mask = full_mask(2, 2);
  const auto h = random_input<double>(2, 2, 2, mask, rng);
  const auto encoded = encode_batch(h, mask, params, cfg);

  Tensor3<double> wrong_local(2, 3, cfg.local_dim(), 0.0);
  Matrix<double> grad_global(2, cfg.local_dim(), 0.0);
  CHECK_THROWS_AS(encoder_backward(wrong_local, grad_global, mask, params, cfg,
                                   encoded.cache),
                  StaleCache);
}

}  // TEST_SUITE
