#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "misent/corpus.hpp"
#include "misent/embed_source.hpp"
#include "misent/metrics.hpp"
#include "misent/model.hpp"
#include "misent/tensor.hpp"

namespace misent {

// Encodes each sentence independently (row s = global embedding of sentence
// s). Sentences are independent, so threads > 1 changes nothing but wall
// time.
Matrix<float> embed_sentences(const Model<float>& model, const EmbedSource<float>& source,
                              const std::vector<TokenizedSentence>& sentences,
                              unsigned threads = 1);

// Cosine similarities of all pairs correlated against the gold scores.
// Sentences are deduplicated by text before encoding.
CorrelationReport eval_sts(const Model<float>& model, const EmbedSource<float>& source,
                           const std::vector<ScoredSentencePair>& pairs,
                           unsigned threads = 1);

struct ProbeReport {
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
};

// SentEval-style probe: multinomial logistic regression on frozen features,
// k-fold cross-validation with stratified folds. Trained per fold by
// full-batch gradient descent with L2 penalty (bias unpenalized) until the
// gradient norm drops below 1e-6 or 5000 iterations.
ProbeReport probe_features(const Matrix<double>& features,
                           const std::vector<int>& labels, std::size_t folds,
                           double l2, std::uint64_t seed);

ProbeReport probe_classification(const Model<float>& model,
                                 const EmbedSource<float>& source,
                                 const std::vector<LabeledSentence>& items,
                                 std::size_t folds, double l2,
                                 std::uint64_t seed, unsigned threads = 1);

// JSON-Lines export {"id": i, "embedding": [...]} in corpus order.
void embed_file(const Model<float>& model, const EmbedSource<float>& source,
                const std::vector<TokenizedSentence>& sentences,
                const std::filesystem::path& out_path, unsigned threads = 1);

// Mean intra-class cosine minus mean inter-class cosine over all row pairs;
// the separation diagnostic used by the acceptance checks.
double separation_statistic(const Matrix<float>& embeddings,
                            const std::vector<int>& labels);

}  // namespace misent
