#include "misent/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "json.hpp"
#include "misent/error.hpp"
#include "misent/rng.hpp"

namespace misent {

namespace {

std::vector<float> encode_one(const Model<float>& model,
                              const EmbedSource<float>& source,
                              const TokenizedSentence& sentence,
                              std::size_t id) {
  Batch batch = make_single_batch({sentence}, {id});
  Tensor3<float> input = embed_batch(batch, source);
  EncodedBatch<float> encoded =
      encode_batch(input, batch.mask, model.encoder, model.encoder_config);
  return {encoded.global.row(0), encoded.global.row(0) + model.local_dim()};
}

void run_indexed(std::size_t count, unsigned threads,
                 const std::function<void(std::size_t)>& work) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto loop = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        work(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::min<unsigned>(threads, std::thread::hardware_concurrency()
                                                     ? std::thread::hardware_concurrency()
                                                     : threads);
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

Matrix<float> embed_sentences(const Model<float>& model,
                              const EmbedSource<float>& source,
                              const std::vector<TokenizedSentence>& sentences,
                              unsigned threads) {
  Matrix<float> out(sentences.size(), model.local_dim(), 0.0f);
  run_indexed(sentences.size(), threads, [&](std::size_t i) {
    const std::vector<float> g = encode_one(model, source, sentences[i], i);
    std::copy(g.begin(), g.end(), out.row(i));
  });
  return out;
}

CorrelationReport eval_sts(const Model<float>& model,
                           const EmbedSource<float>& source,
                           const std::vector<ScoredSentencePair>& pairs,
                           unsigned threads) {
  if (pairs.size() < 2)
    throw TooFewPairs("STS evaluation needs at least 2 pairs, got " +
                      std::to_string(pairs.size()));

  // encode each distinct sentence once
  std::vector<TokenizedSentence> unique;
  std::unordered_map<std::string, std::size_t> index;
  auto intern = [&](const TokenizedSentence& s) {
    const std::string key = join_tokens(s);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    const std::size_t id = unique.size();
    index.emplace(key, id);
    unique.push_back(s);
    return id;
  };
  std::vector<std::pair<std::size_t, std::size_t>> pair_ids;
  pair_ids.reserve(pairs.size());
  for (const auto& p : pairs)
    pair_ids.emplace_back(intern(p.sentence_a), intern(p.sentence_b));

  const Matrix<float> embeddings = embed_sentences(model, source, unique, threads);

  std::vector<double> predicted(pairs.size()), gold(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    predicted[i] = cosine(embeddings.row(pair_ids[i].first),
                          embeddings.row(pair_ids[i].second),
                          embeddings.cols());
    gold[i] = pairs[i].score;
  }

  CorrelationReport report;
  report.n_pairs = pairs.size();
  report.spearman_rho = spearman(predicted, gold);
  report.pearson_r = pearson(predicted, gold);
  return report;
}

namespace {

// One multinomial logistic regression fit by full-batch gradient descent.
// Returns the weight matrix C x (d+1); the last column is the bias.
Matrix<double> fit_logreg(const Matrix<double>& features,
                          const std::vector<int>& labels,
                          const std::vector<std::size_t>& train_idx,
                          std::size_t num_classes, double l2) {
  const std::size_t d = features.cols();
  const std::size_t n = train_idx.size();
  Matrix<double> w(num_classes, d + 1, 0.0);

  // Lipschitz bound for the step size: 0.5 * lambda_max(X~'X~)/n + l2,
  // lambda_max by power iteration.
  Matrix<double> gram(d + 1, d + 1, 0.0);
  for (std::size_t r : train_idx) {
    const double* x = features.row(r);
    for (std::size_t i = 0; i <= d; ++i) {
      const double xi = i < d ? x[i] : 1.0;
      for (std::size_t j = i; j <= d; ++j) {
        const double xj = j < d ? x[j] : 1.0;
        gram(i, j) += xi * xj;
      }
    }
  }
  for (std::size_t i = 0; i <= d; ++i)
    for (std::size_t j = 0; j < i; ++j) gram(i, j) = gram(j, i);

  std::vector<double> vec(d + 1, 1.0 / std::sqrt(static_cast<double>(d + 1)));
  double lambda_max = 0.0;
  for (int it = 0; it < 100; ++it) {
    std::vector<double> out(d + 1, 0.0);
    for (std::size_t i = 0; i <= d; ++i)
      out[i] = dot(gram.row(i), vec.data(), d + 1);
    double norm = 0.0;
    for (double x : out) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    lambda_max = norm;
    for (std::size_t i = 0; i <= d; ++i) vec[i] = out[i] / norm;
  }
  const double lipschitz = 0.5 * lambda_max / static_cast<double>(n) + l2;
  const double lr = lipschitz > 0 ? 1.0 / lipschitz : 1.0;

  Matrix<double> grad(num_classes, d + 1, 0.0);
  std::vector<double> scores(num_classes);
  for (int iter = 0; iter < 5000; ++iter) {
    grad.fill(0.0);
    for (std::size_t r : train_idx) {
      const double* x = features.row(r);
      double max_score = -1e300;
      for (std::size_t c = 0; c < num_classes; ++c) {
        scores[c] = dot(w.row(c), x, d) + w(c, d);
        max_score = std::max(max_score, scores[c]);
      }
      double z = 0.0;
      for (std::size_t c = 0; c < num_classes; ++c) {
        scores[c] = std::exp(scores[c] - max_score);
        z += scores[c];
      }
      for (std::size_t c = 0; c < num_classes; ++c) {
        const double p = scores[c] / z;
        const double coef =
            (p - (labels[r] == static_cast<int>(c) ? 1.0 : 0.0)) /
            static_cast<double>(n);
        axpy(coef, x, grad.row(c), d);
        grad(c, d) += coef;
      }
    }
    double norm = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      for (std::size_t j = 0; j < d; ++j) {
        grad(c, j) += l2 * w(c, j);  // bias unpenalized
        norm += grad(c, j) * grad(c, j);
      }
      norm += grad(c, d) * grad(c, d);
    }
    if (std::sqrt(norm) < 1e-6) break;
    for (std::size_t i = 0; i < w.size(); ++i)
      w.data()[i] -= lr * grad.data()[i];
  }
  return w;
}

}  // namespace

ProbeReport probe_features(const Matrix<double>& features,
                           const std::vector<int>& labels, std::size_t folds,
                           double l2, std::uint64_t seed) {
  if (features.rows() != labels.size())
    throw ShapeMismatch("feature/label count mismatch");
  if (folds < 2) throw InvalidConfig("need at least 2 folds");

  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw InvalidConfig("negative class label");
    max_label = std::max(max_label, l);
  }
  const std::size_t num_classes = static_cast<std::size_t>(max_label) + 1;
  if (num_classes < 2) throw ClassTooSmall("need at least 2 classes");

  // stratified fold assignment: shuffle within class, deal round-robin
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<std::size_t> fold_of(labels.size(), 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].size() < folds)
      throw ClassTooSmall("class " + std::to_string(c) + " has " +
                          std::to_string(by_class[c].size()) +
                          " examples but " + std::to_string(folds) +
                          " folds were requested");
    Rng rng(mix_seed(seed, c));
    rng.shuffle(by_class[c]);
    for (std::size_t i = 0; i < by_class[c].size(); ++i)
      fold_of[by_class[c][i]] = i % folds;
  }

  ProbeReport report;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      (fold_of[i] == f ? test_idx : train_idx).push_back(i);
    const Matrix<double> w =
        fit_logreg(features, labels, train_idx, num_classes, l2);
    std::size_t correct = 0;
    const std::size_t d = features.cols();
    for (std::size_t i : test_idx) {
      const double* x = features.row(i);
      std::size_t best = 0;
      double best_score = -1e300;
      for (std::size_t c = 0; c < num_classes; ++c) {
        const double s = dot(w.row(c), x, d) + w(c, d);
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      if (static_cast<int>(best) == labels[i]) ++correct;
    }
    report.fold_accuracies.push_back(static_cast<double>(correct) /
                                     static_cast<double>(test_idx.size()));
  }
  double sum = 0.0;
  for (double a : report.fold_accuracies) sum += a;
  report.mean_accuracy = sum / static_cast<double>(folds);
  return report;
}

ProbeReport probe_classification(const Model<float>& model,
                                 const EmbedSource<float>& source,
                                 const std::vector<LabeledSentence>& items,
                                 std::size_t folds, double l2,
                                 std::uint64_t seed, unsigned threads) {
  std::vector<TokenizedSentence> sentences;
  std::vector<int> labels;
  sentences.reserve(items.size());
  for (const auto& item : items) {
    sentences.push_back(item.sentence);
    labels.push_back(item.label);
  }
  const Matrix<float> embedded = embed_sentences(model, source, sentences, threads);
  Matrix<double> features(embedded.rows(), embedded.cols());
  for (std::size_t i = 0; i < embedded.size(); ++i)
    features.data()[i] = static_cast<double>(embedded.data()[i]);
  return probe_features(features, labels, folds, l2, seed);
}

void embed_file(const Model<float>& model, const EmbedSource<float>& source,
                const std::vector<TokenizedSentence>& sentences,
                const std::filesystem::path& out_path, unsigned threads) {
  const Matrix<float> embeddings =
      embed_sentences(model, source, sentences, threads);
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + out_path.string() + " for writing");
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    nlohmann::ordered_json line;
    line["id"] = i;
    nlohmann::ordered_json vec = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < embeddings.cols(); ++j)
      vec.push_back(static_cast<double>(embeddings(i, j)));
    line["embedding"] = std::move(vec);
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write failure on " + out_path.string());
  if (sentences.empty())
    std::cerr << "warning: no sentences to embed, wrote empty file\n";
}

double separation_statistic(const Matrix<float>& embeddings,
                            const std::vector<int>& labels) {
  if (embeddings.rows() != labels.size())
    throw ShapeMismatch("embedding/label count mismatch");
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.rows(); ++j) {
      const double c = cosine(embeddings.row(i), embeddings.row(j),
                              embeddings.cols());
      if (labels[i] == labels[j]) {
        intra += c;
        ++n_intra;
      } else {
        inter += c;
        ++n_inter;
      }
    }
  }
  if (n_intra == 0 || n_inter == 0)
    throw InvalidConfig("separation statistic needs both pair kinds");
  return intra / static_cast<double>(n_intra) -
         inter / static_cast<double>(n_inter);
}

}  // namespace misent
