#include "misent/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "misent/error.hpp"
#include "misent/rng.hpp"

namespace misent {

void SynthConfig::validate() const {
  if (topics < 2) throw InvalidConfig("need at least 2 topics");
  if (per_topic < 10) throw InvalidConfig("need at least 10 sentences per topic");
  if (vocab_per_topic < 2) throw InvalidConfig("vocab_per_topic must be >= 2");
  if (min_tokens < 1 || max_tokens < min_tokens)
    throw InvalidConfig("bad sentence length range");
}

namespace {

std::string topic_token(std::size_t topic, std::size_t index) {
  return "t" + std::to_string(topic) + "w" + std::to_string(index);
}

double jaccard(const std::vector<std::string>& a,
               const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end());
  const std::set<std::string> sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::string format_score(double score) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.1f", score);
  return buf;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace

SynthFixture make_synth_fixture(const SynthConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, hash_name("synth")));

  SynthFixture fixture;
  std::vector<std::vector<std::string>> sentences;
  for (std::size_t topic = 0; topic < config.topics; ++topic) {
    for (std::size_t s = 0; s < config.per_topic; ++s) {
      const std::size_t len =
          config.min_tokens +
          rng.below(config.max_tokens - config.min_tokens + 1);
      std::vector<std::string> tokens;
      tokens.reserve(len);
      for (std::size_t i = 0; i < len; ++i)
        tokens.push_back(topic_token(topic, rng.below(config.vocab_per_topic)));
      fixture.corpus_lines.push_back(join(tokens));
      fixture.label_lines.push_back(std::to_string(topic) + "\t" + join(tokens));
      fixture.topic_of_sentence.push_back(static_cast<int>(topic));
      sentences.push_back(std::move(tokens));
    }
  }

  // Gold score is 5 * token-set Jaccard rounded to 0.1, so same-topic pairs
  // grade smoothly and cross-topic pairs score 0. The first pair is a
  // sentence with itself (score 5.0).
  const std::size_t n_pairs = config.topics * config.per_topic;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    std::size_t i, j;
    if (p == 0) {
      i = j = 0;
    } else if (p % 2 == 1) {
      const std::size_t topic = rng.below(config.topics);
      i = topic * config.per_topic + rng.below(config.per_topic);
      j = topic * config.per_topic + rng.below(config.per_topic);
    } else {
      const std::size_t ta = rng.below(config.topics);
      std::size_t tb = rng.below(config.topics - 1);
      if (tb >= ta) ++tb;
      i = ta * config.per_topic + rng.below(config.per_topic);
      j = tb * config.per_topic + rng.below(config.per_topic);
    }
    const double score =
        std::round(50.0 * jaccard(sentences[i], sentences[j])) / 10.0;
    fixture.pair_lines.push_back(format_score(score) + "\t" +
                                 join(sentences[i]) + "\t" + join(sentences[j]));
  }
  return fixture;
}

void write_synth_fixture(const SynthFixture& fixture,
                         const std::filesystem::path& prefix) {
  const auto write = [](const std::filesystem::path& path,
                        const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& line : lines) out << line << '\n';
    if (!out) throw IoError("write failure on " + path.string());
  };
  write(prefix.string() + ".corpus.txt", fixture.corpus_lines);
  write(prefix.string() + ".pairs.tsv", fixture.pair_lines);
  write(prefix.string() + ".labels.tsv", fixture.label_lines);
}

}  // namespace misent
