#include "misent/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "misent/error.hpp"

namespace misent {

namespace {

using ordered_json = nlohmann::ordered_json;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

float get_f32(const unsigned char* p) {
  const std::uint32_t bits = get_u32(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

ordered_json meta_to_json(const Checkpoint& checkpoint) {
  const CheckpointMeta& meta = checkpoint.meta;
  ordered_json j;
  j["seed"] = meta.seed;
  j["step"] = meta.step;
  j["adam_t"] = meta.adam_t;
  j["train"] = {{"learning_rate", meta.train.learning_rate},
                {"batch_size", meta.train.batch_size},
                {"steps", meta.train.steps ? ordered_json(*meta.train.steps)
                                           : ordered_json(nullptr)},
                {"epochs", meta.train.epochs},
                {"seed", meta.train.seed},
                {"adam_beta1", meta.train.adam_beta1},
                {"adam_beta2", meta.train.adam_beta2},
                {"adam_eps", meta.train.adam_eps},
                {"length_norm", meta.train.length_norm},
                {"divergence_floor", meta.train.divergence_floor}};
  j["encoder"] = {{"windows", meta.encoder.window_sizes},
                  {"filters", meta.encoder.filters_per_window},
                  {"d_in", meta.encoder.d_in}};
  j["disc_hidden"] = meta.disc_hidden;
  j["embeddings"] = {{"kind", meta.embeddings_kind},
                     {"dim", meta.embeddings_dim},
                     {"path", meta.embeddings_path},
                     {"vocab", meta.vocab}};
  ordered_json metrics = ordered_json::array();
  for (const auto& rec : meta.metrics)
    metrics.push_back(ordered_json::array({rec.step, rec.objective}));
  j["metrics"] = std::move(metrics);
  ordered_json tensors = ordered_json::array();
  for (const auto& blob : checkpoint.tensors)
    tensors.push_back({{"name", blob.name}, {"shape", blob.shape}});
  j["tensors"] = std::move(tensors);
  return j;
}

template <typename T>
T require(const ordered_json& j, const char* key) {
  if (!j.contains(key))
    throw CorruptPayload(std::string("checkpoint header missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw CorruptPayload(std::string("checkpoint header field '") + key +
                         "' has wrong type");
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path) {
  const std::string header = meta_to_json(checkpoint).dump();

  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header.size());
  out += header;
  for (const auto& blob : checkpoint.tensors) {
    std::size_t expected = 1;
    for (std::size_t d : blob.shape) expected *= d;
    if (expected != blob.values.size())
      throw ShapeMismatch("tensor '" + blob.name + "' shape/value mismatch");
    for (float v : blob.values) put_f32(out, v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failure on " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failure on " + path.string());

  if (bytes.size() < 16) throw BadMagic("file too short for a checkpoint");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw BadMagic("bad checkpoint magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = get_u32(p + 4);
  if (version != kCheckpointVersion)
    throw UnsupportedVersion("checkpoint version " + std::to_string(version) +
                             " not supported");
  const std::uint64_t header_len = get_u64(p + 8);
  if (16 + header_len > bytes.size())
    throw CorruptPayload("declared header length exceeds file size");

  ordered_json j;
  try {
    j = ordered_json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptPayload(std::string("unparsable checkpoint header: ") + e.what());
  }

  Checkpoint cp;
  cp.meta.seed = require<std::uint64_t>(j, "seed");
  cp.meta.step = require<std::uint64_t>(j, "step");
  cp.meta.adam_t = require<std::uint64_t>(j, "adam_t");
  {
    const ordered_json t = require<ordered_json>(j, "train");
    cp.meta.train.learning_rate = require<double>(t, "learning_rate");
    cp.meta.train.batch_size = require<std::size_t>(t, "batch_size");
    if (!t.contains("steps"))
      throw CorruptPayload("checkpoint header missing 'steps'");
    if (t.at("steps").is_null())
      cp.meta.train.steps = std::nullopt;
    else
      cp.meta.train.steps = require<std::size_t>(t, "steps");
    cp.meta.train.epochs = require<std::size_t>(t, "epochs");
    cp.meta.train.seed = require<std::uint64_t>(t, "seed");
    cp.meta.train.adam_beta1 = require<double>(t, "adam_beta1");
    cp.meta.train.adam_beta2 = require<double>(t, "adam_beta2");
    cp.meta.train.adam_eps = require<double>(t, "adam_eps");
    cp.meta.train.length_norm = require<bool>(t, "length_norm");
    cp.meta.train.divergence_floor = require<double>(t, "divergence_floor");
  }
  {
    const ordered_json e = require<ordered_json>(j, "encoder");
    cp.meta.encoder.window_sizes = require<std::vector<int>>(e, "windows");
    cp.meta.encoder.filters_per_window = require<int>(e, "filters");
    cp.meta.encoder.d_in = require<int>(e, "d_in");
  }
  cp.meta.disc_hidden = require<std::size_t>(j, "disc_hidden");
  {
    const ordered_json e = require<ordered_json>(j, "embeddings");
    cp.meta.embeddings_kind = require<std::string>(e, "kind");
    cp.meta.embeddings_dim = require<std::size_t>(e, "dim");
    cp.meta.embeddings_path = require<std::string>(e, "path");
    cp.meta.vocab = require<std::vector<std::string>>(e, "vocab");
  }
  for (const auto& rec : require<ordered_json>(j, "metrics")) {
    if (!rec.is_array() || rec.size() != 2)
      throw CorruptPayload("malformed metric record");
    cp.meta.metrics.push_back(
        {rec[0].get<std::uint64_t>(), rec[1].get<double>()});
  }

  std::size_t total_floats = 0;
  for (const auto& t : require<ordered_json>(j, "tensors")) {
    TensorBlob blob;
    blob.name = require<std::string>(t, "name");
    blob.shape = require<std::vector<std::size_t>>(t, "shape");
    std::size_t n = 1;
    for (std::size_t d : blob.shape) n *= d;
    blob.values.resize(n);
    total_floats += n;
    cp.tensors.push_back(std::move(blob));
  }

  const std::size_t payload_offset = 16 + header_len;
  if (bytes.size() != payload_offset + total_floats * 4)
    throw CorruptPayload("payload length " +
                         std::to_string(bytes.size() - payload_offset) +
                         " bytes, expected " + std::to_string(total_floats * 4));

  const unsigned char* cursor =
      reinterpret_cast<const unsigned char*>(bytes.data()) + payload_offset;
  for (auto& blob : cp.tensors) {
    for (auto& v : blob.values) {
      v = get_f32(cursor);
      cursor += 4;
    }
  }
  return cp;
}

Checkpoint make_checkpoint(Model<float>& model, const OptimizerState<float>& state,
                           CheckpointMeta meta) {
  Checkpoint cp;
  cp.meta = std::move(meta);
  cp.meta.adam_t = state.t;
  if (model.table && model.table->trainable) {
    cp.meta.vocab = model.table->row_tokens;
    if (!cp.meta.vocab.empty()) cp.meta.vocab.pop_back();  // drop the <unk> row
  }

  const auto refs = model.tensors();
  for (const auto& ref : refs)
    cp.tensors.push_back(
        {ref.name, ref.shape, std::vector<float>(ref.data, ref.data + ref.size)});
  if (state.m.size() != refs.size())
    throw ShapeMismatch("optimizer state does not match model tensors");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    cp.tensors.push_back({"adam.m." + refs[i].name, refs[i].shape, state.m[i]});
    cp.tensors.push_back({"adam.v." + refs[i].name, refs[i].shape, state.v[i]});
  }
  return cp;
}

std::pair<Model<float>, OptimizerState<float>> restore_model(
    const Checkpoint& checkpoint) {
  const CheckpointMeta& meta = checkpoint.meta;
  std::optional<EmbeddingTable<float>> table;
  if (meta.embeddings_kind == "trainable") {
    if (meta.vocab.empty())
      throw CorruptPayload("trainable checkpoint without vocabulary");
    table = init_trainable_table<float>(meta.vocab, meta.embeddings_dim, 0);
  }
  Model<float> model = init_model<float>(meta.encoder, meta.disc_hidden,
                                         /*seed=*/0, std::move(table));

  auto refs = model.tensors();
  OptimizerState<float> state = OptimizerState<float>::zeros_for(refs);
  state.t = meta.adam_t;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const TensorBlob* blob = checkpoint.find(refs[i].name);
    if (!blob)
      throw CorruptPayload("checkpoint missing tensor '" + refs[i].name + "'");
    if (blob->values.size() != refs[i].size || blob->shape != refs[i].shape)
      throw CorruptPayload("tensor '" + refs[i].name + "' has unexpected shape");
    std::copy(blob->values.begin(), blob->values.end(), refs[i].data);

    const TensorBlob* m = checkpoint.find("adam.m." + refs[i].name);
    const TensorBlob* v = checkpoint.find("adam.v." + refs[i].name);
    if (!m || !v || m->values.size() != refs[i].size ||
        v->values.size() != refs[i].size)
      throw CorruptPayload("checkpoint missing optimizer state for '" +
                           refs[i].name + "'");
    state.m[i] = m->values;
    state.v[i] = v->values;
  }
  return {std::move(model), std::move(state)};
}

}  // namespace misent
