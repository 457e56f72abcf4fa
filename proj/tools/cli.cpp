#include "cli.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "misent/checkpoint.hpp"
#include "misent/corpus.hpp"
#include "misent/embed_source.hpp"
#include "misent/error.hpp"
#include "misent/evaluation.hpp"
#include "misent/model.hpp"
#include "misent/synth.hpp"
#include "misent/train.hpp"

namespace misent::cli {

namespace {

using nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmbeddingsSpec {
  std::string kind;  // trainable | static | contextual
  std::size_t dim = 0;
  std::string path;
};

EmbeddingsSpec parse_embeddings_spec(const std::string& spec) {
  const std::size_t colon = spec.find(':');
  if (colon == std::string::npos)
    throw UsageError("--embeddings expects trainable:DIM, static:PATH or "
                     "contextual:PATH");
  EmbeddingsSpec out;
  out.kind = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);
  if (out.kind == "trainable") {
    try {
      out.dim = std::stoul(rest);
    } catch (const std::exception&) {
      out.dim = 0;
    }
    if (out.dim == 0) throw UsageError("trainable embeddings need a positive DIM");
  } else if (out.kind == "static" || out.kind == "contextual") {
    if (rest.empty()) throw UsageError(out.kind + " embeddings need a PATH");
    out.path = rest;
  } else {
    throw UsageError("unknown embeddings kind '" + out.kind + "'");
  }
  return out;
}

// Owns whatever backing data the embedding source borrows.
struct SourceBundle {
  std::optional<EmbeddingTable<float>> static_table;
  std::optional<ContextualStore<float>> store;
  std::unique_ptr<EmbedSource<float>> source;
};

// Rebuilds the embedding source a checkpoint was trained with. Evaluation
// paths look contextual sequences up by token content, training by line id.
SourceBundle resolve_source(const Checkpoint& cp, Model<float>& model,
                            ContextualLookup contextual_mode) {
  SourceBundle bundle;
  const std::string& kind = cp.meta.embeddings_kind;
  if (kind == "trainable") {
    if (!model.table) throw CorruptPayload("checkpoint lacks embedding table");
    bundle.source = std::make_unique<TableSource<float>>(&*model.table);
  } else if (kind == "static") {
    bundle.static_table =
        load_static_vectors<float>(cp.meta.embeddings_path);
    bundle.source = std::make_unique<TableSource<float>>(&*bundle.static_table);
  } else if (kind == "contextual") {
    bundle.store = load_contextual<float>(cp.meta.embeddings_path);
    bundle.source = std::make_unique<ContextualSource<float>>(&*bundle.store,
                                                              contextual_mode);
  } else {
    throw CorruptPayload("unknown embeddings kind '" + kind + "' in checkpoint");
  }
  return bundle;
}

void write_metrics_log(const std::vector<StepRecord>& log,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& rec : log) {
    ordered_json j;
    j["step"] = rec.step;
    j["objective"] = rec.objective;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

std::vector<int> parse_windows(const std::string& raw) {
  std::vector<int> windows;
  std::size_t start = 0;
  while (start <= raw.size()) {
    const std::size_t comma = raw.find(',', start);
    const std::string piece = comma == std::string::npos
                                  ? raw.substr(start)
                                  : raw.substr(start, comma - start);
    if (piece.empty()) throw UsageError("bad --windows list '" + raw + "'");
    try {
      windows.push_back(std::stoi(piece));
    } catch (const std::exception&) {
      throw UsageError("bad --windows entry '" + piece + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (windows.empty()) throw UsageError("--windows list is empty");
  return windows;
}

struct CommonFlags {
  std::string corpus;
  std::string embeddings;
  std::string windows = "1,3,5";
  int filters = 256;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::size_t steps = 0;
  bool steps_set = false;
  std::size_t epochs = 1;
  std::uint64_t seed = 42;
  std::string checkpoint;
  std::string out;
  std::string pairs;
  std::string labeled;
  std::string metrics;
  bool no_length_norm = false;
  std::size_t folds = 10;
  double l2 = 1e-3;
  unsigned threads = 1;
  std::size_t coords = 40;
  std::size_t topics = 2;
  std::size_t per_topic = 100;
};

TrainConfig train_config_from_flags(const CommonFlags& f) {
  TrainConfig config;
  config.learning_rate = f.lr;
  config.batch_size = f.batch_size;
  if (f.steps_set) config.steps = f.steps;
  config.epochs = f.epochs;
  config.seed = f.seed;
  config.length_norm = !f.no_length_norm;
  return config;
}

int cmd_train(const CommonFlags& f) {
  if (f.embeddings.empty()) throw UsageError("train requires --embeddings");
  if (f.out.empty()) throw UsageError("train requires --out");
  const EmbeddingsSpec spec = parse_embeddings_spec(f.embeddings);
  if (f.corpus.empty() && spec.kind != "contextual")
    throw UsageError("train requires --corpus");

  TrainConfig config = train_config_from_flags(f);
  config.validate();

  EncoderConfig enc_cfg;
  enc_cfg.window_sizes = parse_windows(f.windows);
  enc_cfg.filters_per_window = f.filters;

  std::vector<TokenizedSentence> sentences;
  SourceBundle bundle;
  std::optional<EmbeddingTable<float>> trainable_table;

  if (spec.kind == "contextual") {
    bundle.store = load_contextual<float>(spec.path);
    if (f.corpus.empty()) {
      for (const auto& seq : bundle.store->sequences)
        sentences.push_back(seq.tokens);
    } else {
      sentences = load_corpus(f.corpus);
    }
    // training looks sequences up by corpus line id
    for (std::size_t i = 0; i < sentences.size(); ++i)
      if (!bundle.store->find_id(static_cast<std::int64_t>(i)))
        throw MissingSequence("contextual file lacks id " + std::to_string(i) +
                              "; training expects ids 0..N-1 in corpus order");
    enc_cfg.d_in = static_cast<int>(bundle.store->d_in);
  } else {
    sentences = load_corpus(f.corpus);
    if (spec.kind == "trainable") {
      trainable_table = init_trainable_table<float>(build_vocab(sentences),
                                                    spec.dim, f.seed);
      enc_cfg.d_in = static_cast<int>(spec.dim);
    } else {
      bundle.static_table = load_static_vectors<float>(spec.path);
      enc_cfg.d_in = static_cast<int>(bundle.static_table->dim());
    }
  }

  Model<float> model = init_model<float>(enc_cfg, /*disc_hidden=*/0, f.seed,
                                         std::move(trainable_table));
  if (spec.kind == "trainable")
    bundle.source = std::make_unique<TableSource<float>>(&*model.table);
  else if (spec.kind == "static")
    bundle.source = std::make_unique<TableSource<float>>(&*bundle.static_table);
  else
    bundle.source = std::make_unique<ContextualSource<float>>(
        &*bundle.store, ContextualLookup::by_id);

  OptimizerState<float> state;
  {
    auto refs = model.tensors();
    state = OptimizerState<float>::zeros_for(refs);
  }
  const std::vector<StepRecord> log =
      train_ssl(sentences, *bundle.source, model, state, config);

  CheckpointMeta meta;
  meta.seed = f.seed;
  meta.step = log.size();
  meta.train = config;
  meta.encoder = enc_cfg;
  meta.disc_hidden = model.disc_hidden;
  meta.embeddings_kind = spec.kind;
  meta.embeddings_dim = static_cast<std::size_t>(enc_cfg.d_in);
  meta.embeddings_path = spec.path;
  meta.metrics = log;
  save_checkpoint(make_checkpoint(model, state, std::move(meta)), f.out);

  const std::filesystem::path metrics_path =
      f.metrics.empty() ? std::filesystem::path(f.out + ".metrics.jsonl")
                        : std::filesystem::path(f.metrics);
  write_metrics_log(log, metrics_path);

  ordered_json summary;
  summary["checkpoint"] = f.out;
  summary["steps"] = log.size();
  summary["initial_objective"] = log.empty() ? 0.0 : log.front().objective;
  summary["final_objective"] = log.empty() ? 0.0 : log.back().objective;
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_finetune(const CommonFlags& f) {
  if (f.checkpoint.empty()) throw UsageError("finetune requires --checkpoint");
  if (f.pairs.empty()) throw UsageError("finetune requires --pairs");
  if (f.out.empty()) throw UsageError("finetune requires --out");

  TrainConfig config = train_config_from_flags(f);
  config.validate();

  const Checkpoint cp = load_checkpoint(f.checkpoint);
  auto [model, saved_state] = restore_model(cp);
  (void)saved_state;  // the regression stage starts with fresh moments
  SourceBundle bundle = resolve_source(cp, model, ContextualLookup::by_tokens);
  const std::vector<ScoredSentencePair> pairs = load_scored_pairs(f.pairs);

  OptimizerState<float> state;
  {
    auto refs = model.tensors();
    state = OptimizerState<float>::zeros_for(refs);
  }
  const FinetuneResult result =
      finetune_regression(pairs, *bundle.source, model, state, config);

  CheckpointMeta meta = cp.meta;
  meta.train = config;
  meta.step = cp.meta.step + result.log.size();
  meta.metrics = result.log;
  save_checkpoint(make_checkpoint(model, state, std::move(meta)), f.out);

  ordered_json summary;
  summary["checkpoint"] = f.out;
  summary["steps"] = result.log.size();
  summary["mse_before"] = result.mse_before;
  summary["mse_after"] = result.mse_after;
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_embed(const CommonFlags& f) {
  if (f.checkpoint.empty()) throw UsageError("embed requires --checkpoint");
  if (f.corpus.empty()) throw UsageError("embed requires --corpus");
  if (f.out.empty()) throw UsageError("embed requires --out");

  const Checkpoint cp = load_checkpoint(f.checkpoint);
  auto [model, state] = restore_model(cp);
  (void)state;
  SourceBundle bundle = resolve_source(cp, model, ContextualLookup::by_tokens);
  const std::vector<TokenizedSentence> sentences = load_corpus(f.corpus);
  embed_file(model, *bundle.source, sentences, f.out, f.threads);

  ordered_json summary;
  summary["out"] = f.out;
  summary["sentences"] = sentences.size();
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_eval_sts(const CommonFlags& f) {
  if (f.checkpoint.empty()) throw UsageError("eval-sts requires --checkpoint");
  if (f.pairs.empty()) throw UsageError("eval-sts requires --pairs");

  const Checkpoint cp = load_checkpoint(f.checkpoint);
  auto [model, state] = restore_model(cp);
  (void)state;
  SourceBundle bundle = resolve_source(cp, model, ContextualLookup::by_tokens);
  const std::vector<ScoredSentencePair> pairs = load_scored_pairs(f.pairs);
  const CorrelationReport report =
      eval_sts(model, *bundle.source, pairs, f.threads);

  ordered_json j;
  j["spearman_rho"] = report.spearman_rho;
  j["pearson_r"] = report.pearson_r;
  j["n_pairs"] = report.n_pairs;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_eval_cls(const CommonFlags& f) {
  if (f.checkpoint.empty()) throw UsageError("eval-cls requires --checkpoint");
  if (f.labeled.empty()) throw UsageError("eval-cls requires --labeled");

  const Checkpoint cp = load_checkpoint(f.checkpoint);
  auto [model, state] = restore_model(cp);
  (void)state;
  SourceBundle bundle = resolve_source(cp, model, ContextualLookup::by_tokens);
  const std::vector<LabeledSentence> items = load_labeled(f.labeled);
  const ProbeReport report = probe_classification(
      model, *bundle.source, items, f.folds, f.l2, f.seed, f.threads);

  ordered_json j;
  j["fold_accuracies"] = report.fold_accuracies;
  j["mean_accuracy"] = report.mean_accuracy;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_gradcheck(const CommonFlags& f) {
  GradCheckConfig config;
  config.seed = f.seed;
  config.coords_per_tensor = f.coords;
  const GradCheckReport report = gradient_check(config);

  ordered_json j;
  j["max_rel_err"] = report.max_rel_err;
  j["tolerance"] = config.tolerance;
  ordered_json entries = ordered_json::array();
  for (const auto& e : report.entries)
    entries.push_back({{"loss", e.loss_name},
                       {"tensor", e.tensor},
                       {"max_rel_err", e.max_rel_err},
                       {"coords", e.coords_checked}});
  j["tensors"] = std::move(entries);
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_synth(const CommonFlags& f) {
  if (f.out.empty()) throw UsageError("synth requires --out");
  SynthConfig config;
  config.topics = f.topics;
  config.per_topic = f.per_topic;
  config.seed = f.seed;
  const SynthFixture fixture = make_synth_fixture(config);
  write_synth_fixture(fixture, f.out);

  ordered_json j;
  j["corpus"] = f.out + ".corpus.txt";
  j["pairs"] = f.out + ".pairs.tsv";
  j["labels"] = f.out + ".labels.tsv";
  j["sentences"] = fixture.corpus_lines.size();
  j["pair_count"] = fixture.pair_lines.size();
  std::cout << j.dump() << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Unsupervised sentence embeddings via mutual-information "
               "maximization between sentence and n-gram token representations"};
  app.require_subcommand(1);

  CommonFlags f;
  std::string command;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", f.seed, "Random seed (default 42)");
    sub->add_option("--threads", f.threads, "Worker threads for sentence encoding (default 1)")
        ->check(CLI::PositiveNumber);
  };

  CLI::App* train = app.add_subcommand("train", "Self-supervised training");
  train->add_option("--corpus", f.corpus, "Corpus file, one sentence per line");
  train->add_option("--embeddings", f.embeddings,
                    "trainable:DIM | static:PATH | contextual:PATH");
  train->add_option("--windows", f.windows, "Comma-separated odd window sizes (default 1,3,5)");
  train->add_option("--filters", f.filters, "Filters per window (default 256)");
  train->add_option("--batch-size", f.batch_size, "Batch size (default 32)");
  train->add_option("--lr", f.lr, "Learning rate (default 1e-4)");
  train->add_option("--steps", f.steps, "Exact optimizer steps (overrides --epochs)");
  train->add_option("--epochs", f.epochs, "Full passes when --steps is 0 (default 1)");
  train->add_option("--out", f.out, "Checkpoint output path");
  train->add_option("--metrics", f.metrics,
                    "Metric log path (default <out>.metrics.jsonl)");
  train->add_flag("--no-length-norm", f.no_length_norm,
                  "Sum the per-token terms instead of averaging per sentence");
  add_common(train);

  CLI::App* finetune =
      app.add_subcommand("finetune", "Regression fine-tuning on scored pairs");
  finetune->add_option("--checkpoint", f.checkpoint, "Input checkpoint");
  finetune->add_option("--pairs", f.pairs, "Scored pairs TSV");
  finetune->add_option("--out", f.out, "Checkpoint output path");
  finetune->add_option("--batch-size", f.batch_size, "Batch size (default 32)");
  finetune->add_option("--lr", f.lr, "Learning rate (default 1e-4)");
  finetune->add_option("--steps", f.steps, "Exact optimizer steps");
  finetune->add_option("--epochs", f.epochs, "Full passes when --steps is 0");
  add_common(finetune);

  CLI::App* embed = app.add_subcommand("embed", "Export sentence embeddings");
  embed->add_option("--checkpoint", f.checkpoint, "Input checkpoint");
  embed->add_option("--corpus", f.corpus, "Corpus file");
  embed->add_option("--out", f.out, "JSON-Lines output path");
  add_common(embed);

  CLI::App* eval_sts_cmd =
      app.add_subcommand("eval-sts", "Correlate cosine similarity with gold scores");
  eval_sts_cmd->add_option("--checkpoint", f.checkpoint, "Input checkpoint");
  eval_sts_cmd->add_option("--pairs", f.pairs, "Scored pairs TSV");
  add_common(eval_sts_cmd);

  CLI::App* eval_cls_cmd = app.add_subcommand(
      "eval-cls", "Logistic-regression probe with k-fold cross-validation");
  eval_cls_cmd->add_option("--checkpoint", f.checkpoint, "Input checkpoint");
  eval_cls_cmd->add_option("--labeled", f.labeled, "Labeled sentences TSV");
  eval_cls_cmd->add_option("--folds", f.folds, "Cross-validation folds (default 10)");
  eval_cls_cmd->add_option("--l2", f.l2, "L2 penalty (default 1e-3)");
  add_common(eval_cls_cmd);

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradcheck->add_option("--coords", f.coords, "Coordinates per tensor (default 40)");
  add_common(gradcheck);

  CLI::App* synth =
      app.add_subcommand("synth", "Generate a topic-structured synthetic fixture");
  synth->add_option("--topics", f.topics, "Topic count (default 2, min 2)");
  synth->add_option("--per-topic", f.per_topic, "Sentences per topic (default 100, min 10)");
  synth->add_option("--out", f.out, "Output path prefix");
  add_common(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\nRun with --help for usage.\n";
    return 1;
  }

  f.steps_set = train->count("--steps") > 0 || finetune->count("--steps") > 0;

  try {
    if (train->parsed()) return cmd_train(f);
    if (finetune->parsed()) return cmd_finetune(f);
    if (embed->parsed()) return cmd_embed(f);
    if (eval_sts_cmd->parsed()) return cmd_eval_sts(f);
    if (eval_cls_cmd->parsed()) return cmd_eval_cls(f);
    if (gradcheck->parsed()) return cmd_gradcheck(f);
    if (synth->parsed()) return cmd_synth(f);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numerical() ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace misent::cli
