#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "misent/adam.hpp"
#include "misent/corpus.hpp"
#include "misent/embed_source.hpp"
#include "misent/encoder.hpp"
#include "misent/error.hpp"
#include "misent/mi_objective.hpp"
#include "misent/model.hpp"
#include "misent/rng.hpp"

namespace misent {

struct TrainConfig {
  // 1e-4 suits a randomly initialized encoder; 1e-6 is the value used when
  // fine-tuning a pretrained backbone and stalls from-scratch runs.
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::optional<std::size_t> steps;  // exact optimizer updates; unset = epochs
  std::size_t epochs = 1;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool length_norm = true;
  double divergence_floor = -50.0;

  void validate() const {
    // learning_rate 0 is allowed as an explicit no-op (frozen-encoder runs)
    if (learning_rate < 0) throw InvalidConfig("learning_rate must be >= 0");
    if (batch_size < 2) throw InvalidConfig("batch_size must be >= 2");
    if (!steps && epochs == 0)
      throw InvalidConfig("need --steps or epochs > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) ||
        !(adam_beta2 >= 0 && adam_beta2 < 1))
      throw InvalidConfig("Adam betas must lie in [0, 1)");
    if (adam_eps <= 0) throw InvalidConfig("adam_eps must be positive");
  }

  AdamConfig adam() const {
    return {learning_rate, adam_beta1, adam_beta2, adam_eps};
  }
};

struct StepRecord {
  std::uint64_t step = 0;
  double objective = 0.0;
};

namespace detail {

template <typename Real>
void add_matrix(Matrix<Real>& dst, const Matrix<Real>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

template <typename Real>
void accumulate_encoder_grads(Model<Real>& dst, const EncoderGrads<Real>& src) {
  for (std::size_t w = 0; w < dst.encoder.windows.size(); ++w) {
    add_matrix(dst.encoder.windows[w].weight, src.params.windows[w].weight);
    for (std::size_t f = 0; f < dst.encoder.windows[w].bias.size(); ++f)
      dst.encoder.windows[w].bias[f] += src.params.windows[w].bias[f];
  }
}

template <typename Real>
void zero_grads(Model<Real>& grads) {
  for (auto& wp : grads.encoder.windows) {
    wp.weight.fill(Real{0});
    std::fill(wp.bias.begin(), wp.bias.end(), Real{0});
  }
  grads.discriminator.w1.fill(Real{0});
  std::fill(grads.discriminator.b1.begin(), grads.discriminator.b1.end(), Real{0});
  std::fill(grads.discriminator.u.begin(), grads.discriminator.u.end(), Real{0});
  grads.discriminator.b0 = Real{0};
  if (grads.table) grads.table->matrix.fill(Real{0});
}

}  // namespace detail

// Objective of one batch; when `grads` is given it is overwritten with the
// gradients of loss = -objective for every model tensor.
template <typename Real>
Real ssl_objective(const Batch& batch, const EmbedSource<Real>& source,
                   Model<Real>& model, bool length_norm,
                   Model<Real>* grads = nullptr) {
  Tensor3<Real> input = embed_batch(batch, source);
  EncodedBatch<Real> encoded =
      encode_batch(input, batch.mask, model.encoder, model.encoder_config);
  MiBatchResult<Real> result =
      jsd_batch(encoded, model.discriminator, length_norm);
  if (grads) {
    detail::zero_grads(*grads);
    MiGrads<Real> mi = jsd_backward(result, encoded, model.discriminator);
    EncoderGrads<Real> enc =
        encoder_backward(mi.local, mi.global, batch.mask, model.encoder,
                         model.encoder_config, encoded.cache);
    detail::accumulate_encoder_grads(*grads, enc);
    grads->discriminator.w1 = std::move(mi.disc.w1);
    grads->discriminator.b1 = std::move(mi.disc.b1);
    grads->discriminator.u = std::move(mi.disc.u);
    grads->discriminator.b0 = mi.disc.b0;
    if (model.table && model.table->trainable)
      grads->table->matrix = embed_backward(batch, enc.input, *model.table);
  }
  return result.objective;
}

// Mean squared error between cosine(E(a), E(b)) and score/5 over the selected
// pairs. Gradients (when requested) flow through both encoder passes; the
// discriminator is untouched by this loss.
template <typename Real>
Real regression_mse(const std::vector<ScoredSentencePair>& pairs,
                    const std::vector<std::size_t>& indices,
                    const EmbedSource<Real>& source, Model<Real>& model,
                    Model<Real>* grads = nullptr) {
  if (indices.empty()) throw TooFewPairs("no pairs selected");
  if (grads) detail::zero_grads(*grads);
  const std::size_t d = model.local_dim();
  const Real inv_n = Real{1} / static_cast<Real>(indices.size());
  Real mse = Real{0};

  for (std::size_t idx : indices) {
    const ScoredSentencePair& pair = pairs[idx];
    const TokenizedSentence* sides[2] = {&pair.sentence_a, &pair.sentence_b};
    Batch batches[2];
    EncodedBatch<Real> enc[2];
    for (int side = 0; side < 2; ++side) {
      batches[side] = make_single_batch({*sides[side]}, {0});
      Tensor3<Real> input = embed_batch(batches[side], source);
      enc[side] = encode_batch(input, batches[side].mask, model.encoder,
                               model.encoder_config);
    }
    const Real* u = enc[0].global.row(0);
    const Real* v = enc[1].global.row(0);
    const Real nu = std::sqrt(dot(u, u, d));
    const Real nv = std::sqrt(dot(v, v, d));
    if (nu == Real{0} || nv == Real{0})
      throw ZeroVector("zero-norm sentence embedding in pair " +
                       std::to_string(idx));
    const Real cos = dot(u, v, d) / (nu * nv);
    const Real target = static_cast<Real>(pair.score / 5.0);
    const Real err = cos - target;
    mse += err * err * inv_n;

    if (!grads) continue;
    const Real dcos = Real{2} * err * inv_n;
    Matrix<Real> grad_global(1, d, Real{0});
    Tensor3<Real> grad_local(1, batches[0].l_max, d, Real{0});
    for (int side = 0; side < 2; ++side) {
      const Real* self = side == 0 ? u : v;
      const Real* other = side == 0 ? v : u;
      const Real ns = side == 0 ? nu : nv;
      const Real no = side == 0 ? nv : nu;
      Real* g = grad_global.row(0);
      for (std::size_t j = 0; j < d; ++j)
        g[j] = dcos * (other[j] / (ns * no) - cos * self[j] / (ns * ns));
      grad_local = Tensor3<Real>(1, batches[side].l_max, d, Real{0});
      EncoderGrads<Real> eg =
          encoder_backward(grad_local, grad_global, batches[side].mask,
                           model.encoder, model.encoder_config, enc[side].cache);
      detail::accumulate_encoder_grads(*grads, eg);
      if (model.table && model.table->trainable)
        detail::add_matrix(grads->table->matrix,
                           embed_backward(batches[side], eg.input, *model.table));
    }
  }
  return mse;
}

template <typename Real>
bool check_divergence(Real objective, const TrainConfig& config,
                      std::uint64_t step) {
  const double obj = static_cast<double>(objective);
  if (!std::isfinite(obj))
    throw Diverged("non-finite objective at step " + std::to_string(step));
  if (obj < config.divergence_floor)
    throw Diverged("objective " + std::to_string(obj) + " fell below " +
                   std::to_string(config.divergence_floor) + " at step " +
                   std::to_string(step));
  return true;
}

// Self-supervised MI maximization over the corpus. Deterministic given
// (seed, config, corpus); batch order depends only on (seed, epoch).
template <typename Real>
std::vector<StepRecord> train_ssl(const std::vector<TokenizedSentence>& sentences,
                                  const EmbedSource<Real>& source,
                                  Model<Real>& model, OptimizerState<Real>& state,
                                  const TrainConfig& config) {
  config.validate();
  if (sentences.size() < 2)
    throw BatchTooSmall("training needs at least 2 sentences");

  std::vector<StepRecord> log;
  if (config.steps && *config.steps == 0) return log;
  Model<Real> grads = zeros_like(model);
  std::uint64_t step = 0;
  for (std::uint64_t epoch = 0;; ++epoch) {
    const std::vector<Batch> batches = make_batches(
        sentences, config.batch_size, mix_seed(config.seed, epoch), true);
    for (const Batch& batch : batches) {
      const Real objective =
          ssl_objective(batch, source, model, config.length_norm, &grads);
      check_divergence(objective, config, step + 1);
      auto params = model.tensors();
      auto grad_refs = grads.tensors();
      adam_step(params, grad_refs, state, config.adam());
      ++step;
      log.push_back({step, static_cast<double>(objective)});
      if (config.steps && step >= *config.steps) return log;
    }
    if (!config.steps && epoch + 1 >= config.epochs) return log;
  }
}

struct FinetuneResult {
  double mse_before = 0.0;
  double mse_after = 0.0;
  std::vector<StepRecord> log;  // objective field holds the batch MSE
};

// Supervised regression stage: minimizes MSE(cosine, score/5) through both
// siamese encoder passes.
template <typename Real>
FinetuneResult finetune_regression(const std::vector<ScoredSentencePair>& pairs,
                                   const EmbedSource<Real>& source,
                                   Model<Real>& model,
                                   OptimizerState<Real>& state,
                                   const TrainConfig& config) {
  config.validate();
  if (pairs.empty()) throw TooFewPairs("no scored pairs to fine-tune on");

  std::vector<std::size_t> all(pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  FinetuneResult result;
  result.mse_before =
      static_cast<double>(regression_mse<Real>(pairs, all, source, model));

  Model<Real> grads = zeros_like(model);
  std::uint64_t step = 0;
  bool done = config.steps && *config.steps == 0;
  for (std::uint64_t epoch = 0; !done; ++epoch) {
    std::vector<std::size_t> order = all;
    Rng rng(mix_seed(mix_seed(config.seed, 0x66746e65ULL), epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size() && !done;
         start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, order.size());
      const std::vector<std::size_t> chunk(order.begin() + start,
                                           order.begin() + end);
      const Real mse = regression_mse(pairs, chunk, source, model, &grads);
      if (!std::isfinite(static_cast<double>(mse)))
        throw Diverged("non-finite fine-tune loss at step " +
                       std::to_string(step + 1));
      auto params = model.tensors();
      auto grad_refs = grads.tensors();
      adam_step(params, grad_refs, state, config.adam());
      ++step;
      result.log.push_back({step, static_cast<double>(mse)});
      if (config.steps && step >= *config.steps) done = true;
    }
    if (!config.steps && epoch + 1 >= config.epochs) done = true;
  }

  result.mse_after =
      static_cast<double>(regression_mse<Real>(pairs, all, source, model));
  return result;
}

struct GradCheckConfig {
  std::uint64_t seed = 0;
  std::size_t coords_per_tensor = 40;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Test hook: adds a bias to one analytic gradient entry so the check must
  // report a failure for that tensor.
  std::string sabotage_tensor;
};

struct GradCheckEntry {
  std::string loss_name;
  std::string tensor;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
};

namespace detail {

// Central finite differences against the analytic gradients of `loss_fn`
// over every tensor of `model`. Coordinates are drawn per tensor from `rng`.
template <typename LossFn, typename GradFn>
void grad_check_one_loss(const std::string& loss_name, Model<double>& model,
                         LossFn&& loss_fn, GradFn&& grad_fn,
                         const GradCheckConfig& config, Rng& rng,
                         GradCheckReport& report, std::string& failures) {
  Model<double> grads = zeros_like(model);
  grad_fn(&grads);
  if (!config.sabotage_tensor.empty()) {
    for (auto& ref : grads.tensors())
      if (ref.name == config.sabotage_tensor)
        for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] += 0.05;
  }

  auto params = model.tensors();
  auto analytic = grads.tensors();
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    GradCheckEntry entry;
    entry.loss_name = loss_name;
    entry.tensor = params[ti].name;
    for (std::size_t c = 0; c < config.coords_per_tensor; ++c) {
      const std::size_t j =
          static_cast<std::size_t>(rng.below(params[ti].size));
      double* slot = params[ti].data + j;
      const double saved = *slot;
      *slot = saved + config.epsilon;
      const double f_plus = loss_fn();
      *slot = saved - config.epsilon;
      const double f_minus = loss_fn();
      *slot = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * config.epsilon);
      const double a = analytic[ti].data[j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
      if (rel >= config.tolerance)
        failures += "  " + loss_name + ":" + entry.tensor + "[" +
                    std::to_string(j) + "] analytic=" + std::to_string(a) +
                    " numeric=" + std::to_string(numeric) + "\n";
      ++entry.coords_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
}

}  // namespace detail

// Builds a tiny 64-bit model (B=2, l<=4, trainable embeddings) and compares
// the analytic gradients of both losses (MI objective and regression MSE)
// against central differences at random coordinates. Throws GradCheckFailed
// listing the offending coordinates when any relative error reaches the
// tolerance.
inline GradCheckReport gradient_check(const GradCheckConfig& config = {}) {
  GradCheckReport report;
  if (config.coords_per_tensor == 0) return report;

  const std::vector<TokenizedSentence> sentences = {
      {{"apple", "berry", "cedar"}}, {{"delta", "elm", "apple", "berry"}}};
  EncoderConfig enc_cfg;
  enc_cfg.window_sizes = {1, 3};
  enc_cfg.filters_per_window = 4;
  enc_cfg.d_in = 5;

  EmbeddingTable<double> table = init_trainable_table<double>(
      build_vocab(sentences), enc_cfg.d_in, mix_seed(config.seed, 1));
  Model<double> model = init_model<double>(enc_cfg, /*disc_hidden=*/0,
                                           config.seed, std::move(table));
  // Zero-init discriminator output head would zero most gradients; give every
  // tensor generic values so all paths carry signal.
  {
    Rng rng(mix_seed(config.seed, 2));
    for (auto& ref : model.tensors())
      for (std::size_t i = 0; i < ref.size; ++i)
        ref.data[i] += rng.uniform(-0.3, 0.3);
  }
  TableSource<double> source(&*model.table);
  const std::vector<Batch> batches =
      make_batches(sentences, 2, config.seed, false);
  const Batch& batch = batches.front();

  const std::vector<ScoredSentencePair> pairs = {
      {2.5, sentences[0], sentences[1]}, {5.0, sentences[0], sentences[0]}};
  const std::vector<std::size_t> pair_indices = {0, 1};

  std::string failures;
  Rng coord_rng(mix_seed(config.seed, 3));

  detail::grad_check_one_loss(
      "mi", model,
      [&] { return -ssl_objective<double>(batch, source, model, true); },
      [&](Model<double>* grads) {
        ssl_objective<double>(batch, source, model, true, grads);
      },
      config, coord_rng, report, failures);

  detail::grad_check_one_loss(
      "regression", model,
      [&] { return regression_mse<double>(pairs, pair_indices, source, model); },
      [&](Model<double>* grads) {
        regression_mse<double>(pairs, pair_indices, source, model, grads);
      },
      config, coord_rng, report, failures);

  if (!failures.empty())
    throw GradCheckFailed("gradient check failed at:\n" + failures);
  return report;
}

}  // namespace misent
