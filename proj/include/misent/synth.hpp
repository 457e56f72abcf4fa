#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace misent {

// Topic-structured corpus generator for desk-scale checks. Each topic gets a
// disjoint vocabulary; sentences sample 5-12 tokens from a single topic, so
// token overlap carries the semantics the gold scores grade.
struct SynthConfig {
  std::size_t topics = 2;
  std::size_t per_topic = 100;
  std::uint64_t seed = 42;
  std::size_t vocab_per_topic = 30;
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 12;

  void validate() const;
};

struct SynthFixture {
  std::vector<std::string> corpus_lines;
  std::vector<std::string> pair_lines;   // score<TAB>a<TAB>b, score = 5*Jaccard
  std::vector<std::string> label_lines;  // topic<TAB>sentence
  std::vector<int> topic_of_sentence;
};

SynthFixture make_synth_fixture(const SynthConfig& config);

// Writes <prefix>.corpus.txt, <prefix>.pairs.tsv and <prefix>.labels.tsv.
void write_synth_fixture(const SynthFixture& fixture,
                         const std::filesystem::path& prefix);

}  // namespace misent
