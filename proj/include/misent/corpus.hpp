#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "misent/tensor.hpp"

namespace misent {

struct TokenizedSentence {
  std::vector<std::string> tokens;

  std::size_t length() const { return tokens.size(); }
  bool operator==(const TokenizedSentence&) const = default;
};

// A padded mini-batch. `ids` are the positions of the sentences in the
// source corpus (contextual embedding sources key on them). mask(s, i) is 1
// iff position i is a real token of sentence s.
struct Batch {
  std::vector<TokenizedSentence> sentences;
  std::vector<std::size_t> ids;
  Matrix<std::uint8_t> mask;
  std::size_t l_max = 0;

  std::size_t size() const { return sentences.size(); }
};

struct ScoredSentencePair {
  double score = 0.0;  // in [0, 5]
  TokenizedSentence sentence_a;
  TokenizedSentence sentence_b;
};

struct LabeledSentence {
  int label = 0;  // class index >= 0
  TokenizedSentence sentence;
};

// Sentences longer than this are truncated by the file loaders (with a
// warning); padding cost would otherwise be dominated by outliers.
inline constexpr std::size_t kDefaultMaxTokens = 128;

// NFC-normalize, lowercase, split on Unicode whitespace, then peel leading
// and trailing ASCII punctuation off each token as separate tokens.
// Deterministic; throws EmptySentence when nothing remains and EncodingError
// on invalid UTF-8.
TokenizedSentence tokenize(std::string_view text);

std::string join_tokens(const TokenizedSentence& sentence);

// One sentence per line, UTF-8, LF or CRLF. Blank lines are skipped, order
// is preserved. An empty file yields an empty list and a warning on stderr.
std::vector<TokenizedSentence> load_corpus(
    const std::filesystem::path& path,
    std::size_t max_tokens = kDefaultMaxTokens);

// TSV rows `score<TAB>sentence_a<TAB>sentence_b`, score in [0, 5].
std::vector<ScoredSentencePair> load_scored_pairs(
    const std::filesystem::path& path,
    std::size_t max_tokens = kDefaultMaxTokens);

// TSV rows `label<TAB>sentence` with non-negative integer labels.
std::vector<LabeledSentence> load_labeled(
    const std::filesystem::path& path,
    std::size_t max_tokens = kDefaultMaxTokens);

// Sorted unique token list.
std::vector<std::string> build_vocab(
    const std::vector<TokenizedSentence>& sentences);

// Pads the given sentences into one batch.
Batch make_single_batch(std::vector<TokenizedSentence> sentences,
                        std::vector<std::size_t> ids);

// Splits into batches of `batch_size`, each padded to its own l_max. Under
// `shuffle` the order is a seeded Fisher-Yates permutation. A final batch
// with fewer than 2 sentences is merged into the previous one.
std::vector<Batch> make_batches(const std::vector<TokenizedSentence>& sentences,
                                std::size_t batch_size, std::uint64_t seed,
                                bool shuffle);

}  // namespace misent
