#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "misent/embed_source.hpp"
#include "misent/encoder.hpp"
#include "misent/mi_objective.hpp"

namespace misent {

// A view onto one flat parameter (or gradient) tensor.
template <typename Real>
struct TensorRef {
  std::string name;
  Real* data = nullptr;
  std::size_t size = 0;
  std::vector<std::size_t> shape;
};

// All trainable state: the convolution bank, the discriminator, and (when
// the embedding source is a trainable lookup) the embedding table.
template <typename Real>
struct Model {
  EncoderConfig encoder_config;
  std::size_t disc_hidden = 0;
  EncoderParams<Real> encoder;
  DiscriminatorParams<Real> discriminator;
  std::optional<EmbeddingTable<Real>> table;

  std::size_t local_dim() const { return encoder_config.local_dim(); }

  std::vector<TensorRef<Real>> tensors() {
    std::vector<TensorRef<Real>> refs;
    for (auto& wp : encoder.windows) {
      const std::string base = "conv.k" + std::to_string(wp.window);
      refs.push_back({base + ".weight", wp.weight.data(), wp.weight.size(),
                      {wp.weight.rows(), wp.weight.cols()}});
      refs.push_back({base + ".bias", wp.bias.data(), wp.bias.size(),
                      {wp.bias.size()}});
    }
    refs.push_back({"disc.w1", discriminator.w1.data(), discriminator.w1.size(),
                    {discriminator.w1.rows(), discriminator.w1.cols()}});
    refs.push_back({"disc.b1", discriminator.b1.data(), discriminator.b1.size(),
                    {discriminator.b1.size()}});
    refs.push_back({"disc.u", discriminator.u.data(), discriminator.u.size(),
                    {discriminator.u.size()}});
    refs.push_back({"disc.b0", &discriminator.b0, 1, {1}});
    if (table && table->trainable)
      refs.push_back({"embed.table", table->matrix.data(), table->matrix.size(),
                      {table->matrix.rows(), table->matrix.cols()}});
    return refs;
  }
};

// Per-tensor sub-seeds are derived from the tensor name, so the presence of
// one tensor never shifts another's initialization stream.
template <typename Real>
Model<Real> init_model(const EncoderConfig& config, std::size_t disc_hidden,
                       std::uint64_t seed,
                       std::optional<EmbeddingTable<Real>> table = std::nullopt) {
  config.validate();
  Model<Real> model;
  model.encoder_config = config;
  model.disc_hidden = disc_hidden == 0 ? config.local_dim() : disc_hidden;
  model.encoder = init_encoder_params<Real>(config, seed);
  model.discriminator =
      init_discriminator<Real>(config.local_dim(), model.disc_hidden, seed);
  model.table = std::move(table);
  if (model.table && model.table->dim() != static_cast<std::size_t>(config.d_in))
    throw ShapeMismatch("embedding table width " + std::to_string(model.table->dim()) +
                        " != configured d_in " + std::to_string(config.d_in));
  return model;
}

// Same-shaped zero tensors for gradient accumulation.
template <typename Real>
Model<Real> zeros_like(const Model<Real>& model) {
  Model<Real> z;
  z.encoder_config = model.encoder_config;
  z.disc_hidden = model.disc_hidden;
  for (const auto& wp : model.encoder.windows) {
    ConvWindowParams<Real> g;
    g.window = wp.window;
    g.weight = Matrix<Real>(wp.weight.rows(), wp.weight.cols(), Real{0});
    g.bias.assign(wp.bias.size(), Real{0});
    z.encoder.windows.push_back(std::move(g));
  }
  z.discriminator.w1 = Matrix<Real>(model.discriminator.w1.rows(),
                                    model.discriminator.w1.cols(), Real{0});
  z.discriminator.b1.assign(model.discriminator.b1.size(), Real{0});
  z.discriminator.u.assign(model.discriminator.u.size(), Real{0});
  z.discriminator.b0 = Real{0};
  if (model.table && model.table->trainable) {
    EmbeddingTable<Real> t;
    t.trainable = true;
    t.vocab = model.table->vocab;
    t.row_tokens = model.table->row_tokens;
    t.unk_index = model.table->unk_index;
    t.matrix = Matrix<Real>(model.table->matrix.rows(),
                            model.table->matrix.cols(), Real{0});
    z.table = std::move(t);
  }
  return z;
}

}  // namespace misent
