#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "misent/corpus.hpp"
#include "misent/error.hpp"
#include "misent/rng.hpp"
#include "misent/tensor.hpp"

namespace misent {

// Token -> vector lookup. `row_tokens` keeps the row order so a table can be
// rebuilt bit-for-bit from a checkpoint. The last row is the UNK vector.
template <typename Real>
struct EmbeddingTable {
  std::unordered_map<std::string, std::size_t> vocab;
  std::vector<std::string> row_tokens;
  Matrix<Real> matrix;
  bool trainable = false;
  std::size_t unk_index = 0;

  std::size_t dim() const { return matrix.cols(); }

  std::size_t lookup(const std::string& token) const {
    auto it = vocab.find(token);
    return it == vocab.end() ? unk_index : it->second;
  }
};

namespace detail {

inline double parse_real_field(std::string_view field, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw ParseError("line " + std::to_string(line_no) +
                     ": non-numeric vector component '" + std::string(field) +
                     "'");
  return v;
}

inline std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

}  // namespace detail

// Word-vector text format: `token v1 v2 ... v_d`, one entry per line. A
// zero UNK row is appended; the table is frozen.
template <typename Real>
EmbeddingTable<Real> load_static_vectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  EmbeddingTable<Real> table;
  table.trainable = false;
  std::vector<std::vector<Real>> rows;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_spaces(line);
    if (fields.size() < 2)
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected `token v1 ... v_d`");
    const std::string token(fields[0]);
    if (table.vocab.count(token))
      throw ParseError("line " + std::to_string(line_no) +
                       ": duplicate token '" + token + "'");
    std::vector<Real> vec;
    vec.reserve(fields.size() - 1);
    for (std::size_t i = 1; i < fields.size(); ++i)
      vec.push_back(static_cast<Real>(detail::parse_real_field(fields[i], line_no)));
    if (dim == 0) {
      dim = vec.size();
    } else if (vec.size() != dim) {
      throw DimensionMismatch("line " + std::to_string(line_no) + ": vector has " +
                              std::to_string(vec.size()) + " components, expected " +
                              std::to_string(dim));
    }
    table.vocab.emplace(token, rows.size());
    table.row_tokens.push_back(token);
    rows.push_back(std::move(vec));
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  if (rows.empty()) throw ParseError("no vectors in " + path.string());

  table.matrix = Matrix<Real>(rows.size() + 1, dim, Real{0});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c) table.matrix(r, c) = rows[r][c];
  table.unk_index = rows.size();  // zero row
  table.row_tokens.push_back("<unk>");
  return table;
}

// Fresh trainable table over `vocab` plus an UNK row, entries i.i.d. uniform
// in [-1/sqrt(d_in), +1/sqrt(d_in)].
template <typename Real>
EmbeddingTable<Real> init_trainable_table(const std::vector<std::string>& vocab,
                                          std::size_t d_in, std::uint64_t seed) {
  if (vocab.empty()) throw InvalidConfig("empty vocabulary");
  if (d_in == 0) throw InvalidConfig("d_in must be positive");
  EmbeddingTable<Real> table;
  table.trainable = true;
  table.matrix = Matrix<Real>(vocab.size() + 1, d_in, Real{0});
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  Rng rng(mix_seed(seed, hash_name("embed.table")));
  for (std::size_t r = 0; r < table.matrix.rows(); ++r)
    for (std::size_t c = 0; c < d_in; ++c)
      table.matrix(r, c) = static_cast<Real>(rng.uniform(-bound, bound));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    table.vocab.emplace(vocab[i], i);
    table.row_tokens.push_back(vocab[i]);
  }
  table.unk_index = vocab.size();
  table.row_tokens.push_back("<unk>");
  return table;
}

// One precomputed token-embedding sequence, keyed by corpus line id.
template <typename Real>
struct EmbeddingSequence {
  std::int64_t id = 0;
  TokenizedSentence tokens;
  Matrix<Real> vectors;  // length x d_in
};

template <typename Real>
struct ContextualStore {
  std::vector<EmbeddingSequence<Real>> sequences;  // sorted by id
  std::unordered_map<std::int64_t, std::size_t> by_id;
  std::unordered_map<std::string, std::size_t> by_tokens;  // first id wins
  std::size_t d_in = 0;

  const EmbeddingSequence<Real>* find_id(std::int64_t id) const {
    auto it = by_id.find(id);
    return it == by_id.end() ? nullptr : &sequences[it->second];
  }
  const EmbeddingSequence<Real>* find_tokens(const TokenizedSentence& s) const {
    auto it = by_tokens.find(join_tokens(s));
    return it == by_tokens.end() ? nullptr : &sequences[it->second];
  }
};

// JSON-Lines: {"id": int, "tokens": [...], "vectors": [[...], ...]}.
template <typename Real>
ContextualStore<Real> load_contextual(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  ContextualStore<Real> store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("tokens") ||
        !j.contains("vectors"))
      throw SchemaError("line " + std::to_string(line_no) +
                        ": expected fields id, tokens, vectors");
    if (!j["id"].is_number_integer() || !j["tokens"].is_array() ||
        !j["vectors"].is_array())
      throw SchemaError("line " + std::to_string(line_no) + ": bad field types");

    EmbeddingSequence<Real> seq;
    seq.id = j["id"].get<std::int64_t>();
    for (const auto& t : j["tokens"]) {
      if (!t.is_string())
        throw SchemaError("line " + std::to_string(line_no) + ": non-string token");
      seq.tokens.tokens.push_back(t.get<std::string>());
    }
    const auto& vecs = j["vectors"];
    if (vecs.size() != seq.tokens.tokens.size())
      throw SchemaError("line " + std::to_string(line_no) + ": " +
                        std::to_string(vecs.size()) + " vectors for " +
                        std::to_string(seq.tokens.tokens.size()) + " tokens");
    if (seq.tokens.tokens.empty())
      throw SchemaError("line " + std::to_string(line_no) + ": empty sequence");

    std::size_t width = 0;
    for (const auto& row : vecs) {
      if (!row.is_array())
        throw SchemaError("line " + std::to_string(line_no) + ": vector row is not an array");
      if (width == 0) width = row.size();
      if (row.size() != width || width == 0)
        throw SchemaError("line " + std::to_string(line_no) + ": ragged vectors");
    }
    if (store.d_in == 0) {
      store.d_in = width;
    } else if (width != store.d_in) {
      throw DimensionMismatch("line " + std::to_string(line_no) + ": width " +
                              std::to_string(width) + " differs from " +
                              std::to_string(store.d_in));
    }
    seq.vectors = Matrix<Real>(seq.tokens.tokens.size(), width);
    for (std::size_t r = 0; r < vecs.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) {
        if (!vecs[r][c].is_number())
          throw SchemaError("line " + std::to_string(line_no) + ": non-numeric vector entry");
        seq.vectors(r, c) = static_cast<Real>(vecs[r][c].get<double>());
      }
    store.sequences.push_back(std::move(seq));
  }
  if (in.bad()) throw IoError("read failure on " + path.string());

  std::sort(store.sequences.begin(), store.sequences.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < store.sequences.size(); ++i) {
    const auto [it, inserted] = store.by_id.emplace(store.sequences[i].id, i);
    if (!inserted)
      throw SchemaError("duplicate id " + std::to_string(store.sequences[i].id));
    store.by_tokens.emplace(join_tokens(store.sequences[i].tokens), i);
  }
  return store;
}

// Per-token vector provider for embed_batch. Implementations borrow their
// backing data; callers keep it alive.
template <typename Real>
class EmbedSource {
 public:
  virtual ~EmbedSource() = default;
  virtual std::size_t dim() const = 0;
  virtual bool trainable() const { return false; }
  // Writes the vectors of unmasked positions into `out`; padded rows stay 0.
  virtual void fill(const Batch& batch, Tensor3<Real>& out) const = 0;
};

template <typename Real>
class TableSource : public EmbedSource<Real> {
 public:
  explicit TableSource(const EmbeddingTable<Real>* table) : table_(table) {}

  std::size_t dim() const override { return table_->dim(); }
  bool trainable() const override { return table_->trainable; }

  void fill(const Batch& batch, Tensor3<Real>& out) const override {
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& tokens = batch.sentences[s].tokens;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::size_t row = table_->lookup(tokens[i]);
        const Real* src = table_->matrix.row(row);
        Real* dst = out.row(s, i);
        for (std::size_t c = 0; c < table_->dim(); ++c) dst[c] = src[c];
      }
    }
  }

  const EmbeddingTable<Real>& table() const { return *table_; }

 private:
  const EmbeddingTable<Real>* table_;
};

enum class ContextualLookup { by_id, by_tokens };

template <typename Real>
class ContextualSource : public EmbedSource<Real> {
 public:
  ContextualSource(const ContextualStore<Real>* store, ContextualLookup mode)
      : store_(store), mode_(mode) {}

  std::size_t dim() const override { return store_->d_in; }

  void fill(const Batch& batch, Tensor3<Real>& out) const override {
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const EmbeddingSequence<Real>* seq = nullptr;
      if (mode_ == ContextualLookup::by_id) {
        seq = store_->find_id(static_cast<std::int64_t>(batch.ids[s]));
        if (!seq)
          throw MissingSequence("no contextual sequence for id " +
                                std::to_string(batch.ids[s]));
      } else {
        seq = store_->find_tokens(batch.sentences[s]);
        if (!seq)
          throw MissingSequence("no contextual sequence for sentence '" +
                                join_tokens(batch.sentences[s]) + "'");
      }
      if (seq->vectors.rows() != batch.sentences[s].length())
        throw ShapeMismatch("contextual sequence length " +
                            std::to_string(seq->vectors.rows()) +
                            " != sentence length " +
                            std::to_string(batch.sentences[s].length()));
      for (std::size_t i = 0; i < seq->vectors.rows(); ++i) {
        const Real* src = seq->vectors.row(i);
        Real* dst = out.row(s, i);
        for (std::size_t c = 0; c < store_->d_in; ++c) dst[c] = src[c];
      }
    }
  }

 private:
  const ContextualStore<Real>* store_;
  ContextualLookup mode_;
};

// (B x l_max x d_in) with all-zero rows at padded positions.
template <typename Real>
Tensor3<Real> embed_batch(const Batch& batch, const EmbedSource<Real>& source) {
  Tensor3<Real> out(batch.size(), batch.l_max, source.dim(), Real{0});
  source.fill(batch, out);
  return out;
}

// Gradient of the embedding lookup: scatters grad_input rows back onto table
// rows. Only rows of tokens present in the batch receive gradient.
template <typename Real>
Matrix<Real> embed_backward(const Batch& batch, const Tensor3<Real>& grad_input,
                            const EmbeddingTable<Real>& table) {
  if (grad_input.dim0() != batch.size() || grad_input.dim1() != batch.l_max ||
      grad_input.dim2() != table.dim())
    throw ShapeMismatch("embed_backward: gradient tensor shape mismatch");
  Matrix<Real> grad(table.matrix.rows(), table.matrix.cols(), Real{0});
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& tokens = batch.sentences[s].tokens;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::size_t row = table.lookup(tokens[i]);
      axpy(Real{1}, grad_input.row(s, i), grad.row(row), table.dim());
    }
  }
  return grad;
}

}  // namespace misent
